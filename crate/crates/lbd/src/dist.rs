//! Discrete rating distributions over a rating scale.

use serde::{Deserialize, Serialize};

use crate::data::RatingScale;
use crate::error::{Error, Result};

/// A probability vector over the scale's rating values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteRatingDistribution {
    probs: Vec<f64>,
    scale: RatingScale,
}

impl DiscreteRatingDistribution {
    /// Validates length, non-negativity, and normalization (within 1e-9).
    pub fn new(probs: Vec<f64>, scale: RatingScale) -> Result<Self> {
        if probs.len() != scale.n() {
            return Err(Error::Domain(format!(
                "distribution has {} entries for a scale of {}",
                probs.len(),
                scale.n()
            )));
        }
        if probs.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(Error::Domain("distribution entries must be finite and >= 0".into()));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Domain(format!("distribution sums to {sum}, expected 1")));
        }
        Ok(Self { probs, scale })
    }

    /// Clip sub-rounding negatives to zero and renormalize. Used where the
    /// entries come from CDF differences that can go negative at the 1e-15
    /// level.
    pub fn from_probs_clipped(mut probs: Vec<f64>, scale: RatingScale) -> Result<Self> {
        for p in &mut probs {
            if !p.is_finite() {
                return Err(Error::Domain("non-finite probability".into()));
            }
            if *p < 0.0 {
                *p = 0.0;
            }
        }
        let sum: f64 = probs.iter().sum();
        if sum <= 0.0 {
            return Err(Error::Domain("probability mass vanished".into()));
        }
        for p in &mut probs {
            *p /= sum;
        }
        Self::new(probs, scale)
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn scale(&self) -> RatingScale {
        self.scale
    }

    /// Expected rating value.
    pub fn mean(&self) -> f64 {
        self.probs
            .iter()
            .enumerate()
            .map(|(r, p)| p * self.scale.value(r))
            .sum()
    }

    /// Index of the most probable rating; ties resolve to the lower index.
    pub fn mode_index(&self) -> usize {
        let mut best = 0;
        for (r, &p) in self.probs.iter().enumerate().skip(1) {
            if p > self.probs[best] {
                best = r;
            }
        }
        best
    }

    pub fn mode_value(&self) -> f64 {
        self.scale.value(self.mode_index())
    }

    /// Second moment about an arbitrary center, sum p_r (R_r - center)^2.
    pub fn variance_about(&self, center: f64) -> f64 {
        self.probs
            .iter()
            .enumerate()
            .map(|(r, p)| {
                let d = self.scale.value(r) - center;
                p * d * d
            })
            .sum()
    }

    /// Variance about the distribution's own mean.
    pub fn variance(&self) -> f64 {
        self.variance_about(self.mean())
    }

    /// Total probability of rating values >= the threshold.
    pub fn mass_at_least(&self, threshold: f64) -> f64 {
        self.probs
            .iter()
            .enumerate()
            .filter(|(r, _)| self.scale.value(*r) >= threshold - 1e-12)
            .map(|(_, p)| p)
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scale() -> RatingScale {
        RatingScale::half_point()
    }

    #[test]
    fn rejects_malformed() {
        assert!(DiscreteRatingDistribution::new(vec![0.5; 3], scale()).is_err());
        assert!(DiscreteRatingDistribution::new(vec![0.2; 10], scale()).is_err());
        let mut p = vec![0.1; 10];
        p[0] = -0.05;
        p[1] = 0.25;
        assert!(DiscreteRatingDistribution::new(p, scale()).is_err());
    }

    #[test]
    fn moments_of_point_mass() {
        let mut p = vec![0.0; 10];
        p[9] = 1.0;
        let d = DiscreteRatingDistribution::new(p, scale()).unwrap();
        assert_eq!(d.mean(), 5.0);
        assert_eq!(d.mode_value(), 5.0);
        assert_eq!(d.variance(), 0.0);
        assert_eq!(d.mass_at_least(4.5), 1.0);
        assert_eq!(d.mass_at_least(5.5), 0.0);
    }

    #[test]
    fn uniform_mass_and_mode_tie() {
        let d = DiscreteRatingDistribution::new(vec![0.1; 10], scale()).unwrap();
        assert_eq!(d.mode_index(), 0); // tie goes to the lower index
        assert!((d.mean() - 2.75).abs() < 1e-12);
        assert!((d.mass_at_least(4.5) - 0.2).abs() < 1e-12);
    }

    #[test]
    fn clipping_renormalizes() {
        let mut p = vec![0.1; 10];
        p[3] = -1e-15;
        p[4] = 0.2 + 1e-15;
        let d = DiscreteRatingDistribution::from_probs_clipped(p, scale()).unwrap();
        let sum: f64 = d.probs().iter().sum();
        assert!((sum - 1.0).abs() < 1e-15);
        assert_eq!(d.probs()[3], 0.0);
    }
}
