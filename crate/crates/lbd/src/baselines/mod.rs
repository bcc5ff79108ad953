//! The comparison models: biased matrix factorization, Gaussian MF with
//! learned per-interaction variance, and ordinal regression with learned
//! thresholds. All three sit behind the same [`crate::model::RatingModel`]
//! interface as the beta model.

pub mod cmf;
pub mod mf;
pub mod ordrec;

pub use cmf::CmfModel;
pub use mf::MfModel;
pub use ordrec::{OrdRecModel, OrdRecVariant};

use crate::data::RatingScale;
use crate::dist::DiscreteRatingDistribution;
use crate::error::Result;
use crate::special::normal_cdf;

/// Discretize a Gaussian over the scale: rating r owns the interval between
/// the midpoints around it, and the outer ratings absorb the tails.
pub(crate) fn gaussian_discrete(
    mean: f64,
    sigma: f64,
    scale: RatingScale,
) -> Result<DiscreteRatingDistribution> {
    let n = scale.n();
    let half = scale.step() / 2.0;
    let mut probs = Vec::with_capacity(n);
    let mut prev = 0.0;
    for r in 0..n - 1 {
        let cut = normal_cdf((scale.value(r) + half - mean) / sigma);
        probs.push(cut - prev);
        prev = cut;
    }
    probs.push(1.0 - prev);
    DiscreteRatingDistribution::from_probs_clipped(probs, scale)
}
