//! Rating prediction with learned beta distributions.
//!
//! A user-item rating is modeled as a draw from a beta distribution whose
//! mean comes from the cosine similarity of user and item embeddings and
//! whose concentration acts as an explicit confidence. Binning the beta CDF
//! over the rating scale yields a full discrete rating distribution that is
//! trained with a cross-entropy loss through the incomplete beta function's
//! parameter derivatives.
//!
//! The crate also ships the comparison models (biased matrix factorization,
//! Gaussian matrix factorization with learned per-interaction variance, and
//! ordinal regression with learned thresholds), a shared Adam training loop,
//! the evaluation metric suite with confidence-error correlation analysis,
//! and the high-precision targeted recommendation task.

pub mod baselines;
pub mod checkpoint;
pub mod data;
pub mod dist;
pub mod error;
pub mod eval;
pub mod lbd;
pub mod model;
pub mod special;
pub mod targeted;
pub mod train;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
