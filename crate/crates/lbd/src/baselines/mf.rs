//! Biased matrix factorization with a squared-error objective.

use serde::{Deserialize, Serialize};

use crate::data::{Interaction, RatingDataset, RatingScale};
use crate::dist::DiscreteRatingDistribution;
use crate::error::{Error, Result};
use crate::lbd::{dot, init_embedding};
use crate::model::{ParamMeta, RatingModel, Tensor};
use crate::train::seeded_rng;

/// Point predictor U·V + global/user/item biases. A global residual standard
/// deviation fitted after training turns it into a discretized Gaussian when
/// a full distribution is required.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MfModel {
    pub(crate) scale: RatingScale,
    pub(crate) u: Tensor,
    pub(crate) v: Tensor,
    pub(crate) b0: Tensor,
    pub(crate) b_user: Tensor,
    pub(crate) b_item: Tensor,
    pub(crate) sigma: Option<f64>,
}

impl MfModel {
    pub fn init(
        scale: RatingScale,
        num_users: usize,
        num_items: usize,
        dim: usize,
        seed: u64,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Domain("embedding dim must be positive".into()));
        }
        let mut rng = seeded_rng(seed);
        Ok(Self {
            scale,
            u: init_embedding(num_users, dim, &mut rng),
            v: init_embedding(num_items, dim, &mut rng),
            b0: Tensor::scalar(0.0),
            b_user: Tensor::zeros(num_users, 1),
            b_item: Tensor::zeros(num_items, 1),
            sigma: None,
        })
    }

    /// Unclipped score U·V + b0 + b_u + b_i.
    pub fn predict(&self, user: u32, item: u32) -> f64 {
        dot(self.u.row(user as usize), self.v.row(item as usize))
            + self.b0.get()
            + self.b_user.at(user as usize, 0)
            + self.b_item.at(item as usize, 0)
    }

    pub fn sigma(&self) -> Option<f64> {
        self.sigma
    }

    /// Maximum-likelihood residual standard deviation over the given
    /// interactions; required before `distribution` can be used.
    pub fn fit_sigma(&mut self, data: &RatingDataset, indices: &[u32]) -> Result<f64> {
        if indices.is_empty() {
            return Err(Error::Domain("cannot fit sigma on an empty set".into()));
        }
        let mut sq = 0.0;
        for &idx in indices {
            let it = data.interactions()[idx as usize];
            let res = self.predict(it.user, it.item) - self.scale.value(it.rating as usize);
            sq += res * res;
        }
        let sigma = (sq / indices.len() as f64).sqrt().max(1e-9);
        self.sigma = Some(sigma);
        Ok(sigma)
    }
}

impl RatingModel for MfModel {
    fn scale(&self) -> RatingScale {
        self.scale
    }

    fn num_users(&self) -> usize {
        self.u.rows()
    }

    fn num_items(&self) -> usize {
        self.v.rows()
    }

    fn distribution(&self, user: u32, item: u32) -> Result<DiscreteRatingDistribution> {
        let sigma = self.sigma.ok_or_else(|| {
            Error::State("MF sigma has not been fitted; call fit_sigma after training".into())
        })?;
        super::gaussian_discrete(self.predict(user, item), sigma, self.scale)
    }

    fn mean_estimate(&self, user: u32, item: u32) -> Result<f64> {
        Ok(self.predict(user, item).clamp(self.scale.r_min(), self.scale.r_max()))
    }

    fn param_meta(&self) -> Vec<ParamMeta> {
        vec![
            ParamMeta::user_embedding("u"),
            ParamMeta::item_embedding("v"),
            ParamMeta::free("b0"),
            ParamMeta::free("b_user"),
            ParamMeta::free("b_item"),
        ]
    }

    fn params(&self) -> Vec<&Tensor> {
        vec![&self.u, &self.v, &self.b0, &self.b_user, &self.b_item]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.u, &mut self.v, &mut self.b0, &mut self.b_user, &mut self.b_item]
    }

    fn accumulate_batch(&self, batch: &[Interaction], grads: &mut [Tensor]) -> Result<f64> {
        let mut total = 0.0;
        for ex in batch {
            let user = ex.user as usize;
            let item = ex.item as usize;
            let res = self.predict(ex.user, ex.item) - self.scale.value(ex.rating as usize);
            total += res * res;
            let d = 2.0 * res;
            let up = self.u.row(user);
            let vp = self.v.row(item);
            {
                let gu = grads[0].row_mut(user);
                for k in 0..up.len() {
                    gu[k] += d * vp[k];
                }
            }
            {
                let gv = grads[1].row_mut(item);
                for k in 0..vp.len() {
                    gv[k] += d * up[k];
                }
            }
            grads[2].as_mut_slice()[0] += d;
            grads[3].row_mut(user)[0] += d;
            grads[4].row_mut(item)[0] += d;
        }
        Ok(total)
    }
}
