//! Ordinal rating model: an MF score core mapped through learned, strictly
//! increasing thresholds of a logistic distribution.
//!
//! Thresholds are parameterized as a first threshold plus exponentiated
//! increments, which keeps them ordered under unconstrained optimization. The
//! user-item variant adds per-item terms inside the increment exponents.

use serde::{Deserialize, Serialize};

use crate::data::{Interaction, RatingScale};
use crate::dist::DiscreteRatingDistribution;
use crate::error::{Error, Result};
use crate::lbd::{dot, init_embedding, PROB_FLOOR};
use crate::model::{ParamMeta, RatingModel, Tensor};
use crate::special::logistic_cdf;
use crate::train::seeded_rng;

/// Whose parameters shape the thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrdRecVariant {
    /// Per-user thresholds only.
    User,
    /// Per-user thresholds with per-item increment terms.
    UserItem,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrdRecModel {
    pub(crate) scale: RatingScale,
    pub(crate) variant: OrdRecVariant,
    pub(crate) u: Tensor,
    pub(crate) v: Tensor,
    pub(crate) b0: Tensor,
    pub(crate) b_user: Tensor,
    pub(crate) b_item: Tensor,
    /// First threshold per user.
    pub(crate) t1: Tensor,
    /// Per-user increment logits for thresholds 2..n-1.
    pub(crate) c: Tensor,
    /// Per-item increment logits (user-item variant only).
    pub(crate) d: Option<Tensor>,
}

fn logit(q: f64) -> f64 {
    (q / (1.0 - q)).ln()
}

impl OrdRecModel {
    /// Thresholds start as the logistic quantiles' equispaced approximation:
    /// t_1 = logit(1/n) and constant increments reaching logit((n-1)/n),
    /// which makes a zero score predict a roughly uniform rating
    /// distribution.
    pub fn init(
        scale: RatingScale,
        num_users: usize,
        num_items: usize,
        dim: usize,
        variant: OrdRecVariant,
        seed: u64,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Domain("embedding dim must be positive".into()));
        }
        let n = scale.n();
        let mut rng = seeded_rng(seed);
        let t1_init = logit(1.0 / n as f64);
        let increments = n - 2;
        let c_init = if increments > 0 {
            let total = logit((n - 1) as f64 / n as f64) - t1_init;
            (total / increments as f64).ln()
        } else {
            0.0
        };
        Ok(Self {
            scale,
            variant,
            u: init_embedding(num_users, dim, &mut rng),
            v: init_embedding(num_items, dim, &mut rng),
            b0: Tensor::scalar(0.0),
            b_user: Tensor::zeros(num_users, 1),
            b_item: Tensor::zeros(num_items, 1),
            t1: Tensor::filled(num_users, 1, t1_init),
            c: Tensor::filled(num_users, increments, c_init),
            d: matches!(variant, OrdRecVariant::UserItem)
                .then(|| Tensor::zeros(num_items, increments)),
        })
    }

    pub fn variant(&self) -> OrdRecVariant {
        self.variant
    }

    pub fn score(&self, user: u32, item: u32) -> f64 {
        dot(self.u.row(user as usize), self.v.row(item as usize))
            + self.b0.get()
            + self.b_user.at(user as usize, 0)
            + self.b_item.at(item as usize, 0)
    }

    /// Exponentiated increments for this user-item pair (n-2 values).
    fn increments(&self, user: u32, item: u32) -> Vec<f64> {
        let cu = self.c.row(user as usize);
        match &self.d {
            Some(d) => {
                let di = d.row(item as usize);
                cu.iter().zip(di).map(|(a, b)| (a + b).exp()).collect()
            }
            None => cu.iter().map(|a| a.exp()).collect(),
        }
    }

    /// The n-1 strictly increasing thresholds for this pair.
    pub fn thresholds(&self, user: u32, item: u32) -> Vec<f64> {
        let mut t = Vec::with_capacity(self.scale.n() - 1);
        let mut cur = self.t1.at(user as usize, 0);
        t.push(cur);
        for e in self.increments(user, item) {
            cur += e;
            t.push(cur);
        }
        t
    }

    fn cumulative(&self, user: u32, item: u32) -> Vec<f64> {
        let s = self.score(user, item);
        self.thresholds(user, item).iter().map(|&t| logistic_cdf(t - s)).collect()
    }
}

impl RatingModel for OrdRecModel {
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
        let cum = self.cumulative(user, item);
        let n = self.scale.n();
        let mut probs = Vec::with_capacity(n);
        let mut prev = 0.0;
        for &c in &cum {
            probs.push(c - prev);
            prev = c;
        }
        probs.push(1.0 - prev);
        DiscreteRatingDistribution::from_probs_clipped(probs, self.scale)
    }

    fn mean_estimate(&self, user: u32, item: u32) -> Result<f64> {
        Ok(self.distribution(user, item)?.mean())
    }

    fn param_meta(&self) -> Vec<ParamMeta> {
        let mut meta = vec![
            ParamMeta::user_embedding("u"),
            ParamMeta::item_embedding("v"),
            ParamMeta::free("b0"),
            ParamMeta::free("b_user"),
            ParamMeta::free("b_item"),
            ParamMeta::free("t1"),
            ParamMeta::free("c"),
        ];
        if self.d.is_some() {
            meta.push(ParamMeta::free("d"));
        }
        meta
    }

    fn params(&self) -> Vec<&Tensor> {
        let mut out =
            vec![&self.u, &self.v, &self.b0, &self.b_user, &self.b_item, &self.t1, &self.c];
        if let Some(d) = &self.d {
            out.push(d);
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = vec![
            &mut self.u,
            &mut self.v,
            &mut self.b0,
            &mut self.b_user,
            &mut self.b_item,
            &mut self.t1,
            &mut self.c,
        ];
        if let Some(d) = &mut self.d {
            out.push(d);
        }
        out
    }

    fn accumulate_batch(&self, batch: &[Interaction], grads: &mut [Tensor]) -> Result<f64> {
        let n = self.scale.n();
        let mut total = 0.0;
        for ex in batch {
            let user = ex.user as usize;
            let item = ex.item as usize;
            let r = ex.rating as usize;
            let s = self.score(ex.user, ex.item);
            let thresholds = self.thresholds(ex.user, ex.item);
            let incs = self.increments(ex.user, ex.item);

            let cum_at = |m: usize| logistic_cdf(thresholds[m] - s);
            let cum_hi = if r <= n - 2 { cum_at(r) } else { 1.0 };
            let cum_lo = if r >= 1 { cum_at(r - 1) } else { 0.0 };
            let prob = cum_hi - cum_lo;
            total += -prob.max(PROB_FLOOR).ln();
            if prob <= PROB_FLOOR {
                continue;
            }
            let g = -1.0 / prob;

            // d loss / d t[m] for the one or two thresholds bracketing r.
            let mut d_score = 0.0;
            let mut d_t = [0.0f64; 2]; // [lower m = r-1, upper m = r]
            if r <= n - 2 {
                let sp = cum_hi * (1.0 - cum_hi);
                d_t[1] = g * sp;
                d_score += -g * sp;
            }
            if r >= 1 {
                let sp = cum_lo * (1.0 - cum_lo);
                d_t[0] = -g * sp;
                d_score += g * sp;
            }

            // Thresholds t[m] = t1 + sum_{k<m} inc_k.
            let d_t1 = d_t[0] + d_t[1];
            grads[5].row_mut(user)[0] += d_t1;
            // t[m] depends on inc[k] exactly when k < m.
            for k in 0..incs.len() {
                let mut w = 0.0;
                if r >= 1 && k + 1 < r {
                    w += d_t[0];
                }
                if r <= n - 2 && k < r {
                    w += d_t[1];
                }
                if w != 0.0 {
                    let dw = w * incs[k];
                    grads[6].row_mut(user)[k] += dw;
                    if let Some(dg) = grads.get_mut(7) {
                        dg.row_mut(item)[k] += dw;
                    }
                }
            }

            // Score core.
            let up = self.u.row(user);
            let vp = self.v.row(item);
            {
                let gu = grads[0].row_mut(user);
                for k in 0..up.len() {
                    gu[k] += d_score * vp[k];
                }
            }
            {
                let gv = grads[1].row_mut(item);
                for k in 0..vp.len() {
                    gv[k] += d_score * up[k];
                }
            }
            grads[2].as_mut_slice()[0] += d_score;
            grads[3].row_mut(user)[0] += d_score;
            grads[4].row_mut(item)[0] += d_score;
        }
        Ok(total)
    }
}
