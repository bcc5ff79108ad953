//! Gaussian matrix factorization with a learned per-interaction variance
//! that factors into global, user, and item terms.

use serde::{Deserialize, Serialize};

use crate::data::{Interaction, RatingScale};
use crate::dist::DiscreteRatingDistribution;
use crate::error::Result;
use crate::lbd::dot;
use crate::model::{ParamMeta, RatingModel, Tensor};

use super::mf::MfModel;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// MF score core plus log-variance terms: σ²_ij = exp(g0 + g_i + g_j), so the
/// multiplicative variance stays positive under unconstrained optimization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmfModel {
    pub(crate) scale: RatingScale,
    pub(crate) u: Tensor,
    pub(crate) v: Tensor,
    pub(crate) b0: Tensor,
    pub(crate) b_user: Tensor,
    pub(crate) b_item: Tensor,
    pub(crate) g0: Tensor,
    pub(crate) g_user: Tensor,
    pub(crate) g_item: Tensor,
}

impl CmfModel {
    /// Start from a trained MF checkpoint; variance terms start at zero
    /// (σ² = 1).
    pub fn from_mf(mf: &MfModel) -> Self {
        Self {
            scale: mf.scale,
            u: mf.u.clone(),
            v: mf.v.clone(),
            b0: mf.b0.clone(),
            b_user: mf.b_user.clone(),
            b_item: mf.b_item.clone(),
            g0: Tensor::scalar(0.0),
            g_user: Tensor::zeros(mf.u.rows(), 1),
            g_item: Tensor::zeros(mf.v.rows(), 1),
        }
    }

    /// Fresh model without MF initialization; used by tests and generators.
    pub fn init(
        scale: RatingScale,
        num_users: usize,
        num_items: usize,
        dim: usize,
        seed: u64,
    ) -> Result<Self> {
        Ok(Self::from_mf(&MfModel::init(scale, num_users, num_items, dim, seed)?))
    }

    pub fn predict(&self, user: u32, item: u32) -> f64 {
        dot(self.u.row(user as usize), self.v.row(item as usize))
            + self.b0.get()
            + self.b_user.at(user as usize, 0)
            + self.b_item.at(item as usize, 0)
    }

    fn log_variance(&self, user: u32, item: u32) -> f64 {
        self.g0.get() + self.g_user.at(user as usize, 0) + self.g_item.at(item as usize, 0)
    }

    pub fn variance(&self, user: u32, item: u32) -> f64 {
        self.log_variance(user, item).exp()
    }
}

impl RatingModel for CmfModel {
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
        let sigma = (0.5 * self.log_variance(user, item)).exp();
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
            ParamMeta::free("g0"),
            ParamMeta::free("g_user"),
            ParamMeta::free("g_item"),
        ]
    }

    fn params(&self) -> Vec<&Tensor> {
        vec![
            &self.u,
            &self.v,
            &self.b0,
            &self.b_user,
            &self.b_item,
            &self.g0,
            &self.g_user,
            &self.g_item,
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.u,
            &mut self.v,
            &mut self.b0,
            &mut self.b_user,
            &mut self.b_item,
            &mut self.g0,
            &mut self.g_user,
            &mut self.g_item,
        ]
    }

    fn accumulate_batch(&self, batch: &[Interaction], grads: &mut [Tensor]) -> Result<f64> {
        let mut total = 0.0;
        for ex in batch {
            let user = ex.user as usize;
            let item = ex.item as usize;
            let res = self.scale.value(ex.rating as usize) - self.predict(ex.user, ex.item);
            let s = self.log_variance(ex.user, ex.item);
            let inv_var = (-s).exp();
            total += HALF_LN_2PI + 0.5 * s + 0.5 * res * res * inv_var;

            let d_mean = -res * inv_var;
            let d_s = 0.5 * (1.0 - res * res * inv_var);

            let up = self.u.row(user);
            let vp = self.v.row(item);
            {
                let gu = grads[0].row_mut(user);
                for k in 0..up.len() {
                    gu[k] += d_mean * vp[k];
                }
            }
            {
                let gv = grads[1].row_mut(item);
                for k in 0..vp.len() {
                    gv[k] += d_mean * up[k];
                }
            }
            grads[2].as_mut_slice()[0] += d_mean;
            grads[3].row_mut(user)[0] += d_mean;
            grads[4].row_mut(item)[0] += d_mean;
            grads[5].as_mut_slice()[0] += d_s;
            grads[6].row_mut(user)[0] += d_s;
            grads[7].row_mut(item)[0] += d_s;
        }
        Ok(total)
    }
}
