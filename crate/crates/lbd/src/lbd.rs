//! The learned-beta-distribution rating model.
//!
//! Embeddings determine a beta distribution per user-item pair: the cosine
//! similarity gives the mean, a positive function of the embeddings gives the
//! confidence, optional bias terms adjust either (α, β) directly or (μ, ν),
//! and binning the CDF over the rating scale produces the discrete rating
//! distribution. The cross-entropy loss is differentiated analytically all
//! the way back to the embeddings through the incomplete beta function's
//! parameter derivatives.

use serde::{Deserialize, Serialize};

use crate::data::{Interaction, RatingScale};
use crate::dist::DiscreteRatingDistribution;
use crate::error::{Error, Result};
use crate::model::{ParamMeta, RatingModel, Tensor};
use crate::special::{betainc, betainc_with_grad, BetaShape};

/// Probability floor applied before taking logs in the loss.
pub const PROB_FLOOR: f64 = 1e-12;

/// Confidence function mapping two embeddings to ν > 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfidenceFn {
    /// Product of the L2 norms.
    Norm,
    /// L2 norm of the sum.
    Sum,
    /// Absolute dot product.
    Dot,
}

/// Where bias weights enter the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasScheme {
    None,
    /// Additive global/user/item weights on α and β, floored at ε.
    AlphaBeta,
    /// Multiplicative weights on ν and a piecewise-linear remap of μ.
    MuNu,
}

/// Discretization strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Binning {
    /// Equisized bins.
    Static,
    /// Per-user-item softmax bin widths from learned θ parameters.
    Adaptive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LbdConfig {
    pub embedding_dim: usize,
    pub confidence_fn: ConfidenceFn,
    pub bias_scheme: BiasScheme,
    pub binning: Binning,
    /// Floor for ν and for the biased α, β.
    pub epsilon: f64,
    /// μ is kept inside [mu_clamp, 1 - mu_clamp].
    pub mu_clamp: f64,
    /// Use a second embedding pair for the confidence function.
    pub separate_embeddings: bool,
}

impl Default for LbdConfig {
    fn default() -> Self {
        Self {
            embedding_dim: 512,
            confidence_fn: ConfidenceFn::Sum,
            bias_scheme: BiasScheme::AlphaBeta,
            binning: Binning::Static,
            epsilon: 1e-8,
            mu_clamp: 1e-6,
            separate_embeddings: false,
        }
    }
}

impl LbdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim == 0 {
            return Err(Error::Domain("embedding_dim must be positive".into()));
        }
        for (name, v) in [("epsilon", self.epsilon), ("mu_clamp", self.mu_clamp)] {
            if !(v > 0.0 && v <= 1e-2) {
                return Err(Error::Domain(format!("{name} must lie in (0, 1e-2], got {v}")));
            }
        }
        Ok(())
    }
}

/// Mean prediction ½ + ½·cos(U, V), clamped into (0, 1).
pub fn predict_mu(u: &[f64], v: &[f64], mu_clamp: f64) -> Result<f64> {
    let nu = norm(u);
    let nv = norm(v);
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::Domain("predict_mu requires non-zero embeddings".into()));
    }
    let cos = dot(u, v) / (nu * nv);
    Ok((0.5 + 0.5 * cos).clamp(mu_clamp, 1.0 - mu_clamp))
}

/// Confidence prediction, floored at epsilon.
pub fn predict_nu(u: &[f64], v: &[f64], f: ConfidenceFn, epsilon: f64) -> f64 {
    confidence_raw(u, v, f).max(epsilon)
}

fn confidence_raw(u: &[f64], v: &[f64], f: ConfidenceFn) -> f64 {
    match f {
        ConfidenceFn::Norm => norm(u) * norm(v),
        ConfidenceFn::Sum => {
            let sum_sq: f64 = u.iter().zip(v).map(|(a, b)| (a + b) * (a + b)).sum();
            sum_sq.sqrt()
        }
        ConfidenceFn::Dot => dot(u, v).abs(),
    }
}

/// (μ, ν) to (α, β) = (μν, (1−μ)ν).
pub fn reparameterize(mu: f64, nu: f64) -> BetaShape {
    BetaShape { alpha: mu * nu, beta: (1.0 - mu) * nu }
}

/// Additive α/β bias weights, floored at ε.
pub fn apply_alpha_beta_bias(
    shape: BetaShape,
    a0: f64,
    a_user: f64,
    a_item: f64,
    b0: f64,
    b_user: f64,
    b_item: f64,
    epsilon: f64,
) -> BetaShape {
    BetaShape {
        alpha: (a0 + a_user + a_item + shape.alpha).max(epsilon),
        beta: (b0 + b_user + b_item + shape.beta).max(epsilon),
    }
}

/// μ/ν bias weights: ν is multiplied by v0·v_i·v_j, and μ is remapped by the
/// continuous piecewise-linear map with pivot p = u0·u_i·u_j, which fixes 0
/// and 1 and sends μ = p to ½. The result is clamped like `predict_mu`.
pub fn apply_mu_nu_bias(
    mu: f64,
    nu: f64,
    u0: f64,
    u_user: f64,
    u_item: f64,
    v0: f64,
    v_user: f64,
    v_item: f64,
    mu_clamp: f64,
) -> (f64, f64) {
    let p = u0 * u_user * u_item;
    let remapped = if mu < p { mu / (2.0 * p) } else { 0.5 + (mu - p) / (2.0 * (1.0 - p)) };
    (remapped.clamp(mu_clamp, 1.0 - mu_clamp), v0 * v_user * v_item * nu)
}

/// Equisized bin edges 0, 1/n, ..., 1.
pub fn static_edges(n: usize) -> Vec<f64> {
    (0..=n).map(|r| r as f64 / n as f64).collect()
}

/// Softmax bin edges from per-user and per-item θ rows.
///
/// Returns (edges, widths); the edges are cumulative-sum ratios, so all-zero
/// θ reproduces `static_edges` bit for bit. The final edge is exactly 1.
pub fn adaptive_edges(theta_user: &[f64], theta_item: &[f64]) -> (Vec<f64>, Vec<f64>) {
    debug_assert_eq!(theta_user.len(), theta_item.len());
    let n = theta_user.len();
    let z: Vec<f64> = theta_user.iter().zip(theta_item).map(|(a, b)| a + b).collect();
    let z_max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = z.iter().map(|&v| (v - z_max).exp()).collect();
    let total: f64 = w.iter().sum();
    let mut edges = Vec::with_capacity(n + 1);
    edges.push(0.0);
    let mut cum = 0.0;
    for &wk in w.iter().take(n - 1) {
        cum += wk;
        edges.push(cum / total);
    }
    edges.push(1.0);
    let widths = w.iter().map(|&wk| wk / total).collect();
    (edges, widths)
}

/// Bin the beta CDF over the edges: probs[r] = I(e_{r+1}) − I(e_r).
pub fn rating_distribution(
    shape: BetaShape,
    edges: &[f64],
    scale: RatingScale,
) -> Result<DiscreteRatingDistribution> {
    debug_assert_eq!(edges.len(), scale.n() + 1);
    let mut cdf = Vec::with_capacity(edges.len());
    for &e in edges {
        cdf.push(betainc(e, shape)?);
    }
    let probs: Vec<f64> = cdf.windows(2).map(|w| w[1] - w[0]).collect();
    DiscreteRatingDistribution::from_probs_clipped(probs, scale)
}

/// α/β bias tensors: scalars a0/b0 plus per-user and per-item weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct AlphaBetaBias {
    pub a0: Tensor,
    pub b0: Tensor,
    pub a_user: Tensor,
    pub b_user: Tensor,
    pub a_item: Tensor,
    pub b_item: Tensor,
}

/// μ/ν bias tensors: u-type weights in (0,1), v-type weights positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct MuNuBias {
    pub u0: Tensor,
    pub v0: Tensor,
    pub u_user: Tensor,
    pub v_user: Tensor,
    pub u_item: Tensor,
    pub v_item: Tensor,
}

/// The learned-beta-distribution model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LbdModel {
    pub(crate) scale: RatingScale,
    pub(crate) config: LbdConfig,
    pub(crate) u: Tensor,
    pub(crate) v: Tensor,
    pub(crate) u_conf: Option<Tensor>,
    pub(crate) v_conf: Option<Tensor>,
    pub(crate) ab: Option<AlphaBetaBias>,
    pub(crate) mn: Option<MuNuBias>,
    pub(crate) theta_user: Option<Tensor>,
    pub(crate) theta_item: Option<Tensor>,
}

impl LbdModel {
    /// Fresh model: embedding entries i.i.d. zero-mean with standard
    /// deviation 1/√D (zero rows redrawn), α/β biases at 0, u-type biases at
    /// 0.5, v-type at 1, θ at 0.
    pub fn init(
        scale: RatingScale,
        num_users: usize,
        num_items: usize,
        config: LbdConfig,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let mut rng = crate::train::seeded_rng(seed);
        let d = config.embedding_dim;
        let u = init_embedding(num_users, d, &mut rng);
        let v = init_embedding(num_items, d, &mut rng);
        let (u_conf, v_conf) = if config.separate_embeddings {
            (Some(init_embedding(num_users, d, &mut rng)), Some(init_embedding(num_items, d, &mut rng)))
        } else {
            (None, None)
        };
        let ab = matches!(config.bias_scheme, BiasScheme::AlphaBeta).then(|| AlphaBetaBias {
            a0: Tensor::scalar(0.0),
            b0: Tensor::scalar(0.0),
            a_user: Tensor::zeros(num_users, 1),
            b_user: Tensor::zeros(num_users, 1),
            a_item: Tensor::zeros(num_items, 1),
            b_item: Tensor::zeros(num_items, 1),
        });
        let mn = matches!(config.bias_scheme, BiasScheme::MuNu).then(|| MuNuBias {
            u0: Tensor::scalar(0.5),
            v0: Tensor::scalar(1.0),
            u_user: Tensor::filled(num_users, 1, 0.5),
            v_user: Tensor::filled(num_users, 1, 1.0),
            u_item: Tensor::filled(num_items, 1, 0.5),
            v_item: Tensor::filled(num_items, 1, 1.0),
        });
        let (theta_user, theta_item) = match config.binning {
            Binning::Adaptive => (
                Some(Tensor::zeros(num_users, scale.n())),
                Some(Tensor::zeros(num_items, scale.n())),
            ),
            Binning::Static => (None, None),
        };
        Ok(Self { scale, config, u, v, u_conf, v_conf, ab, mn, theta_user, theta_item })
    }

    pub fn config(&self) -> &LbdConfig {
        &self.config
    }

    fn conf_rows(&self, user: u32, item: u32) -> (&[f64], &[f64]) {
        match (&self.u_conf, &self.v_conf) {
            (Some(uc), Some(vc)) => (uc.row(user as usize), vc.row(item as usize)),
            _ => (self.u.row(user as usize), self.v.row(item as usize)),
        }
    }

    /// Forward pass through the parameter pipeline, keeping the intermediates
    /// the backward pass needs.
    fn predict_shape(&self, user: u32, item: u32) -> Result<ShapeParts> {
        let up = self.u.row(user as usize);
        let vp = self.v.row(item as usize);
        let n_u = norm(up);
        let n_v = norm(vp);
        if n_u == 0.0 || n_v == 0.0 {
            return Err(Error::Domain(format!(
                "zero embedding row for user {user} / item {item}"
            )));
        }
        let cos = dot(up, vp) / (n_u * n_v);
        let mu_raw = 0.5 + 0.5 * cos;
        let mc = self.config.mu_clamp;
        let mu0 = mu_raw.clamp(mc, 1.0 - mc);
        let mu0_clamped = mu_raw != mu0;

        let (uc, vc) = self.conf_rows(user, item);
        let nu_raw = confidence_raw(uc, vc, self.config.confidence_fn);
        let nu = nu_raw.max(self.config.epsilon);
        let nu_floored = nu_raw < self.config.epsilon;

        let mut parts = ShapeParts {
            n_u,
            n_v,
            cos,
            mu0,
            mu0_clamped,
            nu,
            nu_floored,
            pivot: 0.5,
            branch_low: false,
            mu_prime: mu0,
            mu_prime_clamped: false,
            v_prod: 1.0,
            alpha_floored: false,
            beta_floored: false,
            shape: BetaShape { alpha: 0.0, beta: 0.0 },
        };

        match self.config.bias_scheme {
            BiasScheme::None => {
                parts.shape = reparameterize(mu0, nu);
            }
            BiasScheme::AlphaBeta => {
                let base = reparameterize(mu0, nu);
                let ab = self.ab.as_ref().expect("alpha/beta bias tensors");
                let eps = self.config.epsilon;
                let a_pre =
                    ab.a0.get() + ab.a_user.at(user as usize, 0) + ab.a_item.at(item as usize, 0) + base.alpha;
                let b_pre =
                    ab.b0.get() + ab.b_user.at(user as usize, 0) + ab.b_item.at(item as usize, 0) + base.beta;
                parts.alpha_floored = a_pre < eps;
                parts.beta_floored = b_pre < eps;
                parts.shape = BetaShape { alpha: a_pre.max(eps), beta: b_pre.max(eps) };
            }
            BiasScheme::MuNu => {
                let mn = self.mn.as_ref().expect("mu/nu bias tensors");
                let p = mn.u0.get() * mn.u_user.at(user as usize, 0) * mn.u_item.at(item as usize, 0);
                let v_prod =
                    mn.v0.get() * mn.v_user.at(user as usize, 0) * mn.v_item.at(item as usize, 0);
                let branch_low = mu0 < p;
                let remapped =
                    if branch_low { mu0 / (2.0 * p) } else { 0.5 + (mu0 - p) / (2.0 * (1.0 - p)) };
                let mu_prime = remapped.clamp(mc, 1.0 - mc);
                parts.pivot = p;
                parts.branch_low = branch_low;
                parts.mu_prime = mu_prime;
                parts.mu_prime_clamped = remapped != mu_prime;
                parts.v_prod = v_prod;
                parts.shape = reparameterize(mu_prime, v_prod * nu);
            }
        }
        Ok(parts)
    }

    /// Bin edges for one user-item pair, plus the softmax widths when the
    /// binning is adaptive.
    fn edges(&self, user: u32, item: u32) -> (Vec<f64>, Option<Vec<f64>>) {
        match self.config.binning {
            Binning::Static => (static_edges(self.scale.n()), None),
            Binning::Adaptive => {
                let tu = self.theta_user.as_ref().expect("theta_user");
                let ti = self.theta_item.as_ref().expect("theta_item");
                let (edges, widths) = adaptive_edges(tu.row(user as usize), ti.row(item as usize));
                (edges, Some(widths))
            }
        }
    }

    /// Gradient of the per-example loss, accumulated unscaled into `grads`.
    fn accumulate_example(
        &self,
        ex: Interaction,
        layout: &Layout,
        grads: &mut [Tensor],
    ) -> Result<f64> {
        let user = ex.user as usize;
        let item = ex.item as usize;
        let r = ex.rating as usize;
        let parts = self.predict_shape(ex.user, ex.item)?;
        let shape = parts.shape;
        let (edges, widths) = self.edges(ex.user, ex.item);

        let lo = edges[r];
        let hi = edges[r + 1];
        let interior = |e: f64| e > 0.0 && e < 1.0;

        let (val_lo, grad_lo) = if interior(lo) {
            let (v, g) = betainc_with_grad(lo, shape)?;
            (v, Some(g))
        } else {
            (if lo <= 0.0 { 0.0 } else { 1.0 }, None)
        };
        let (val_hi, grad_hi) = if interior(hi) {
            let (v, g) = betainc_with_grad(hi, shape)?;
            (v, Some(g))
        } else {
            (if hi >= 1.0 { 1.0 } else { 0.0 }, None)
        };

        let prob = val_hi - val_lo;
        let loss = -prob.max(PROB_FLOOR).ln();
        // Subgradient convention: no gradient once the probability floor is
        // active.
        let g = if prob > PROB_FLOOR { -1.0 / prob } else { 0.0 };

        let d_alpha = g
            * (grad_hi.map_or(0.0, |gr| gr.d_alpha) - grad_lo.map_or(0.0, |gr| gr.d_alpha));
        let d_beta =
            g * (grad_hi.map_or(0.0, |gr| gr.d_beta) - grad_lo.map_or(0.0, |gr| gr.d_beta));

        // Adaptive binning: chain through the softmax edges.
        if let Some(widths) = &widths {
            let n = self.scale.n();
            let d_lo = grad_lo.map_or(0.0, |gr| -g * gr.d_x);
            let d_hi = grad_hi.map_or(0.0, |gr| g * gr.d_x);
            let gu = grads[layout.theta_user.unwrap()].row_mut(user);
            for k in 0..n {
                let mut t = 0.0;
                if grad_hi.is_some() {
                    t += d_hi * widths[k] * (if k < r + 1 { 1.0 } else { 0.0 } - hi);
                }
                if grad_lo.is_some() {
                    t += d_lo * widths[k] * (if k < r { 1.0 } else { 0.0 } - lo);
                }
                gu[k] += t;
            }
            let gi = grads[layout.theta_item.unwrap()].row_mut(item);
            for k in 0..n {
                let mut t = 0.0;
                if grad_hi.is_some() {
                    t += d_hi * widths[k] * (if k < r + 1 { 1.0 } else { 0.0 } - hi);
                }
                if grad_lo.is_some() {
                    t += d_lo * widths[k] * (if k < r { 1.0 } else { 0.0 } - lo);
                }
                gi[k] += t;
            }
        }

        // Chain the shape gradient back through the bias scheme to the raw
        // (μ, ν) prediction.
        let d_mu0;
        let d_nu_model;
        match self.config.bias_scheme {
            BiasScheme::None => {
                d_mu0 = parts.nu * (d_alpha - d_beta);
                d_nu_model = parts.mu0 * d_alpha + (1.0 - parts.mu0) * d_beta;
            }
            BiasScheme::AlphaBeta => {
                let d_a_pre = if parts.alpha_floored { 0.0 } else { d_alpha };
                let d_b_pre = if parts.beta_floored { 0.0 } else { d_beta };
                let ab = layout.ab.as_ref().expect("alpha/beta grad layout");
                grads[ab.a0].as_mut_slice()[0] += d_a_pre;
                grads[ab.b0].as_mut_slice()[0] += d_b_pre;
                grads[ab.a_user].row_mut(user)[0] += d_a_pre;
                grads[ab.b_user].row_mut(user)[0] += d_b_pre;
                grads[ab.a_item].row_mut(item)[0] += d_a_pre;
                grads[ab.b_item].row_mut(item)[0] += d_b_pre;
                d_mu0 = parts.nu * (d_a_pre - d_b_pre);
                d_nu_model = parts.mu0 * d_a_pre + (1.0 - parts.mu0) * d_b_pre;
            }
            BiasScheme::MuNu => {
                let mn_vals = self.mn.as_ref().expect("mu/nu bias tensors");
                let mn = layout.mn.as_ref().expect("mu/nu grad layout");
                let nu_prime = parts.v_prod * parts.nu;
                let d_mu_prime = nu_prime * (d_alpha - d_beta);
                let d_nu_prime = parts.mu_prime * d_alpha + (1.0 - parts.mu_prime) * d_beta;

                let d_remap = if parts.mu_prime_clamped { 0.0 } else { d_mu_prime };
                let p = parts.pivot;
                let (dd_mu0, d_p) = if parts.branch_low {
                    (d_remap / (2.0 * p), -d_remap * parts.mu0 / (2.0 * p * p))
                } else {
                    (
                        d_remap / (2.0 * (1.0 - p)),
                        d_remap * (parts.mu0 - 1.0) / (2.0 * (1.0 - p) * (1.0 - p)),
                    )
                };
                d_mu0 = dd_mu0;

                let u0 = mn_vals.u0.get();
                let uu = mn_vals.u_user.at(user, 0);
                let ui = mn_vals.u_item.at(item, 0);
                grads[mn.u0].as_mut_slice()[0] += d_p * uu * ui;
                grads[mn.u_user].row_mut(user)[0] += d_p * u0 * ui;
                grads[mn.u_item].row_mut(item)[0] += d_p * u0 * uu;

                let v0 = mn_vals.v0.get();
                let vu = mn_vals.v_user.at(user, 0);
                let vi = mn_vals.v_item.at(item, 0);
                grads[mn.v0].as_mut_slice()[0] += d_nu_prime * vu * vi * parts.nu;
                grads[mn.v_user].row_mut(user)[0] += d_nu_prime * v0 * vi * parts.nu;
                grads[mn.v_item].row_mut(item)[0] += d_nu_prime * v0 * vu * parts.nu;
                d_nu_model = d_nu_prime * parts.v_prod;
            }
        }

        // μ path into the preference embeddings.
        if !parts.mu0_clamped && d_mu0 != 0.0 {
            let d_cos = 0.5 * d_mu0;
            let up = self.u.row(user);
            let vp = self.v.row(item);
            let inv_uv = 1.0 / (parts.n_u * parts.n_v);
            let cu = parts.cos / (parts.n_u * parts.n_u);
            let cv = parts.cos / (parts.n_v * parts.n_v);
            {
                let gu = grads[layout.u].row_mut(user);
                for k in 0..up.len() {
                    gu[k] += d_cos * (vp[k] * inv_uv - cu * up[k]);
                }
            }
            let gv = grads[layout.v].row_mut(item);
            for k in 0..vp.len() {
                gv[k] += d_cos * (up[k] * inv_uv - cv * vp[k]);
            }
        }

        // ν path into the confidence embeddings.
        if !parts.nu_floored && d_nu_model != 0.0 {
            let (uc, vc) = self.conf_rows(ex.user, ex.item);
            let (gu_idx, gv_idx) = match (layout.u_conf, layout.v_conf) {
                (Some(a), Some(b)) => (a, b),
                _ => (layout.u, layout.v),
            };
            match self.config.confidence_fn {
                ConfidenceFn::Norm => {
                    let nu_c = norm(uc);
                    let nv_c = norm(vc);
                    if nu_c > 0.0 && nv_c > 0.0 {
                        let fu = d_nu_model * nv_c / nu_c;
                        let fv = d_nu_model * nu_c / nv_c;
                        {
                            let gu = grads[gu_idx].row_mut(user);
                            for k in 0..uc.len() {
                                gu[k] += fu * uc[k];
                            }
                        }
                        let gv = grads[gv_idx].row_mut(item);
                        for k in 0..vc.len() {
                            gv[k] += fv * vc[k];
                        }
                    }
                }
                ConfidenceFn::Sum => {
                    // ν = ||u + v||; gradient (u + v)/ν on both sides.
                    let f = d_nu_model / parts.nu;
                    {
                        let gu = grads[gu_idx].row_mut(user);
                        for k in 0..uc.len() {
                            gu[k] += f * (uc[k] + vc[k]);
                        }
                    }
                    let gv = grads[gv_idx].row_mut(item);
                    for k in 0..vc.len() {
                        gv[k] += f * (uc[k] + vc[k]);
                    }
                }
                ConfidenceFn::Dot => {
                    let s = if dot(uc, vc) >= 0.0 { 1.0 } else { -1.0 };
                    let f = d_nu_model * s;
                    {
                        let gu = grads[gu_idx].row_mut(user);
                        for k in 0..uc.len() {
                            gu[k] += f * vc[k];
                        }
                    }
                    let gv = grads[gv_idx].row_mut(item);
                    for k in 0..vc.len() {
                        gv[k] += f * uc[k];
                    }
                }
            }
        }

        Ok(loss)
    }

    fn layout(&self) -> Layout {
        let mut idx = 0;
        let mut next = || {
            let i = idx;
            idx += 1;
            i
        };
        let u = next();
        let v = next();
        let (u_conf, v_conf) = if self.config.separate_embeddings {
            (Some(next()), Some(next()))
        } else {
            (None, None)
        };
        let ab = self.ab.as_ref().map(|_| AbLayout {
            a0: next(),
            b0: next(),
            a_user: next(),
            b_user: next(),
            a_item: next(),
            b_item: next(),
        });
        let mn = self.mn.as_ref().map(|_| MnLayout {
            u0: next(),
            v0: next(),
            u_user: next(),
            v_user: next(),
            u_item: next(),
            v_item: next(),
        });
        let theta_user = self.theta_user.as_ref().map(|_| next());
        let theta_item = self.theta_item.as_ref().map(|_| next());
        Layout { u, v, u_conf, v_conf, ab, mn, theta_user, theta_item }
    }
}

struct ShapeParts {
    n_u: f64,
    n_v: f64,
    cos: f64,
    mu0: f64,
    mu0_clamped: bool,
    nu: f64,
    nu_floored: bool,
    pivot: f64,
    branch_low: bool,
    mu_prime: f64,
    mu_prime_clamped: bool,
    v_prod: f64,
    alpha_floored: bool,
    beta_floored: bool,
    shape: BetaShape,
}

struct Layout {
    u: usize,
    v: usize,
    u_conf: Option<usize>,
    v_conf: Option<usize>,
    ab: Option<AbLayout>,
    mn: Option<MnLayout>,
    theta_user: Option<usize>,
    theta_item: Option<usize>,
}

struct AbLayout {
    a0: usize,
    b0: usize,
    a_user: usize,
    b_user: usize,
    a_item: usize,
    b_item: usize,
}

struct MnLayout {
    u0: usize,
    v0: usize,
    u_user: usize,
    v_user: usize,
    u_item: usize,
    v_item: usize,
}

impl RatingModel for LbdModel {
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
        let parts = self.predict_shape(user, item)?;
        let (edges, _) = self.edges(user, item);
        rating_distribution(parts.shape, &edges, self.scale)
    }

    fn mean_estimate(&self, user: u32, item: u32) -> Result<f64> {
        Ok(self.distribution(user, item)?.mean())
    }

    fn param_meta(&self) -> Vec<ParamMeta> {
        let mut meta = vec![ParamMeta::user_embedding("u"), ParamMeta::item_embedding("v")];
        if self.config.separate_embeddings {
            meta.push(ParamMeta::user_embedding("u_conf"));
            meta.push(ParamMeta::item_embedding("v_conf"));
        }
        if self.ab.is_some() {
            meta.extend([
                ParamMeta::free("a0"),
                ParamMeta::free("b0"),
                ParamMeta::free("a_user"),
                ParamMeta::free("b_user"),
                ParamMeta::free("a_item"),
                ParamMeta::free("b_item"),
            ]);
        }
        if self.mn.is_some() {
            meta.extend([
                ParamMeta::open_unit("u0"),
                ParamMeta::positive("v0"),
                ParamMeta::open_unit("u_user"),
                ParamMeta::positive("v_user"),
                ParamMeta::open_unit("u_item"),
                ParamMeta::positive("v_item"),
            ]);
        }
        if self.theta_user.is_some() {
            meta.push(ParamMeta::free("theta_user"));
            meta.push(ParamMeta::free("theta_item"));
        }
        meta
    }

    fn params(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.u, &self.v];
        if let (Some(a), Some(b)) = (&self.u_conf, &self.v_conf) {
            out.push(a);
            out.push(b);
        }
        if let Some(ab) = &self.ab {
            out.extend([&ab.a0, &ab.b0, &ab.a_user, &ab.b_user, &ab.a_item, &ab.b_item]);
        }
        if let Some(mn) = &self.mn {
            out.extend([&mn.u0, &mn.v0, &mn.u_user, &mn.v_user, &mn.u_item, &mn.v_item]);
        }
        if let Some(t) = &self.theta_user {
            out.push(t);
        }
        if let Some(t) = &self.theta_item {
            out.push(t);
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = vec![&mut self.u, &mut self.v];
        if let (Some(a), Some(b)) = (&mut self.u_conf, &mut self.v_conf) {
            out.push(a);
            out.push(b);
        }
        if let Some(ab) = &mut self.ab {
            out.extend([
                &mut ab.a0,
                &mut ab.b0,
                &mut ab.a_user,
                &mut ab.b_user,
                &mut ab.a_item,
                &mut ab.b_item,
            ]);
        }
        if let Some(mn) = &mut self.mn {
            out.extend([
                &mut mn.u0,
                &mut mn.v0,
                &mut mn.u_user,
                &mut mn.v_user,
                &mut mn.u_item,
                &mut mn.v_item,
            ]);
        }
        if let Some(t) = &mut self.theta_user {
            out.push(t);
        }
        if let Some(t) = &mut self.theta_item {
            out.push(t);
        }
        out
    }

    fn accumulate_batch(&self, batch: &[Interaction], grads: &mut [Tensor]) -> Result<f64> {
        let layout = self.layout();
        let mut total = 0.0;
        for &ex in batch {
            total += self.accumulate_example(ex, &layout, grads)?;
        }
        Ok(total)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn init_embedding(rows: usize, dim: usize, rng: &mut impl rand::Rng) -> Tensor {
    let bound = (3.0 / dim as f64).sqrt();
    let mut t = Tensor::zeros(rows, dim);
    for r in 0..rows {
        loop {
            let row = t.row_mut(r);
            for x in row.iter_mut() {
                *x = rng.gen_range(-bound..=bound);
            }
            if row.iter().any(|&x| x != 0.0) {
                break;
            }
        }
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special::beta_pdf;
    use crate::testutil::gradient_check;
    use crate::train::{loss_value, seeded_rng};
    use proptest::prelude::*;
    use rand::Rng;

    fn scale10() -> RatingScale {
        RatingScale::half_point()
    }

    fn config(
        f: ConfidenceFn,
        bias: BiasScheme,
        binning: Binning,
        separate: bool,
    ) -> LbdConfig {
        LbdConfig {
            embedding_dim: 4,
            confidence_fn: f,
            bias_scheme: bias,
            binning,
            separate_embeddings: separate,
            ..LbdConfig::default()
        }
    }

    #[test]
    fn predict_mu_examples() {
        let clamp = 1e-6;
        // Parallel embeddings: cosine 1, clamped below 1.
        let m = predict_mu(&[0.3, -0.4], &[0.3, -0.4], clamp).unwrap();
        assert_eq!(m, 1.0 - clamp);
        // Orthogonal: exactly 1/2.
        let m = predict_mu(&[1.0, 0.0], &[0.0, 1.0], clamp).unwrap();
        assert_eq!(m, 0.5);
        // Hand cosine: (1,2)·(2,1) = 4, norms √5 each, cos = 4/5.
        let m = predict_mu(&[1.0, 2.0], &[2.0, 1.0], clamp).unwrap();
        assert!((m - 0.9).abs() < 1e-15);
        assert!(predict_mu(&[0.0, 0.0], &[1.0, 0.0], clamp).is_err());
    }

    #[test]
    fn predict_nu_examples() {
        let eps = 1e-8;
        let u = [1.0, 0.0];
        let v = [0.0, 1.0];
        assert!((predict_nu(&u, &v, ConfidenceFn::Norm, eps) - 1.0).abs() < 1e-15);
        assert!(
            (predict_nu(&u, &v, ConfidenceFn::Sum, eps) - std::f64::consts::SQRT_2).abs()
                < 1e-15
        );
        assert_eq!(predict_nu(&u, &v, ConfidenceFn::Dot, eps), eps);
    }

    #[test]
    fn reparameterize_examples() {
        let s = reparameterize(0.5, 2.0);
        assert_eq!((s.alpha, s.beta), (1.0, 1.0));
        let s = reparameterize(0.9, 10.0);
        assert!((s.alpha - 9.0).abs() < 1e-12 && (s.beta - 1.0).abs() < 1e-12);
        // Round trip.
        let s = reparameterize(0.37, 4.2);
        assert!((s.alpha / (s.alpha + s.beta) - 0.37).abs() < 1e-12);
        assert!((s.alpha + s.beta - 4.2).abs() < 1e-12);
    }

    #[test]
    fn alpha_beta_bias_examples() {
        let base = BetaShape { alpha: 1.0, beta: 2.0 };
        let s = apply_alpha_beta_bias(base, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1e-6);
        assert_eq!((s.alpha, s.beta), (1.0, 2.0));
        let s = apply_alpha_beta_bias(base, -5.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1e-6);
        assert_eq!(s.alpha, 1e-6);
        let s = apply_alpha_beta_bias(BetaShape { alpha: 2.0, beta: 1.0 }, 1.0, 0.25, 0.25, 0.0, 0.0, 0.0, 1e-6);
        assert!((s.alpha - 3.5).abs() < 1e-15);
    }

    #[test]
    fn mu_nu_bias_examples() {
        // p = 0.5: identity on mu.
        for mu in [0.1, 0.37, 0.5, 0.93] {
            let (m, _) = apply_mu_nu_bias(mu, 1.0, 0.5, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0);
            assert!((m - mu).abs() < 1e-12, "p=0.5 should be identity, got {m} for {mu}");
        }
        // mu = p maps to 1/2 for any pivot.
        for p in [0.1, 0.25, 0.5, 0.8] {
            let (m, _) = apply_mu_nu_bias(p, 1.0, p, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0);
            assert!((m - 0.5).abs() < 1e-12);
        }
        // Hand evaluation of the upper branch.
        let (m, _) = apply_mu_nu_bias(0.625, 1.0, 0.25, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0);
        assert!((m - 0.75).abs() < 1e-12);
        // nu is a plain product.
        let (_, nv) = apply_mu_nu_bias(0.5, 3.0, 0.5, 1.0, 1.0, 2.0, 0.5, 4.0, 0.0);
        assert!((nv - 12.0).abs() < 1e-12);
    }

    #[test]
    fn mu_nu_map_fixes_endpoints_and_stays_continuous() {
        for p in [0.05, 0.3, 0.62, 0.9] {
            let map = |mu: f64| apply_mu_nu_bias(mu, 1.0, p, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0).0;
            assert_eq!(map(0.0), 0.0);
            assert_eq!(map(1.0), 1.0);
            let below = map(p - 1e-9);
            let above = map(p + 1e-9);
            assert!((below - 0.5).abs() < 1e-8 && (above - 0.5).abs() < 1e-8);
        }
    }

    #[test]
    fn bin_edges_examples() {
        let e = static_edges(10);
        assert_eq!(e.len(), 11);
        assert_eq!(e[0], 0.0);
        assert_eq!(e[10], 1.0);
        assert!((e[3] - 0.3).abs() < 1e-15);

        // Adaptive with equal theta equals static bit for bit.
        let (e_a, w) = adaptive_edges(&[0.7; 10], &[-0.2; 10]);
        for (a, b) in e_a.iter().zip(&static_edges(10)) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);

        // Softmax by hand: theta_u = (ln 3, 0), theta_i = 0.
        let (e, w) = adaptive_edges(&[3.0f64.ln(), 0.0], &[0.0, 0.0]);
        assert!((w[0] - 0.75).abs() < 1e-15 && (w[1] - 0.25).abs() < 1e-15);
        assert_eq!(e[0], 0.0);
        assert!((e[1] - 0.75).abs() < 1e-15);
        assert_eq!(e[2], 1.0);
    }

    #[test]
    fn rating_distribution_examples() {
        let d = rating_distribution(BetaShape { alpha: 1.0, beta: 1.0 }, &static_edges(10), scale10())
            .unwrap();
        for &p in d.probs() {
            assert!((p - 0.1).abs() < 1e-12);
        }

        let two_scale = RatingScale::new(0.5, 1.0, 2).unwrap();
        let d = rating_distribution(
            BetaShape { alpha: 2.0, beta: 5.0 },
            &[0.0, 0.5, 1.0],
            two_scale,
        )
        .unwrap();
        assert!((d.probs()[0] - 0.890625).abs() < 1e-12);
        assert!((d.probs()[1] - 0.109375).abs() < 1e-12);

        // I_x(9, 1) = x^9, so the top half-point bin carries 1 - 0.9^9.
        let d = rating_distribution(BetaShape { alpha: 9.0, beta: 1.0 }, &static_edges(10), scale10())
            .unwrap();
        assert!((d.probs()[9] - (1.0 - 0.9f64.powi(9))).abs() < 1e-12);
        assert!((d.probs()[9] - 0.612580).abs() < 5e-7);
    }

    fn toy_model(cfg: LbdConfig, seed: u64) -> LbdModel {
        LbdModel::init(scale10(), 3, 3, cfg, seed).unwrap()
    }

    fn toy_batch() -> Vec<Interaction> {
        vec![
            Interaction { user: 0, item: 0, rating: 9 },
            Interaction { user: 0, item: 1, rating: 3 },
            Interaction { user: 1, item: 2, rating: 0 },
            Interaction { user: 2, item: 1, rating: 5 },
            Interaction { user: 2, item: 2, rating: 7 },
            Interaction { user: 1, item: 0, rating: 4 },
        ]
    }

    #[test]
    fn forward_uniform_loss() {
        // Orthogonal embeddings with ||u + v|| = 2 give Beta(1, 1); with ten
        // static bins every rating has probability 0.1.
        let mut model = toy_model(
            config(ConfidenceFn::Sum, BiasScheme::None, Binning::Static, false),
            1,
        );
        let r2 = std::f64::consts::SQRT_2;
        model.u.row_mut(0).copy_from_slice(&[r2, 0.0, 0.0, 0.0]);
        model.v.row_mut(0).copy_from_slice(&[0.0, r2, 0.0, 0.0]);
        let d = model.distribution(0, 0).unwrap();
        for &p in d.probs() {
            assert!((p - 0.1).abs() < 1e-10);
        }
        let one = vec![Interaction { user: 0, item: 0, rating: 4 }];
        let loss = loss_value(&model, &one, None).unwrap();
        assert!((loss - 0.1f64.ln().abs()).abs() < 1e-9);

        // A batch of two identical examples has the same mean loss.
        let two = vec![one[0], one[0]];
        let loss2 = loss_value(&model, &two, None).unwrap();
        assert!((loss - loss2).abs() < 1e-12);
    }

    #[test]
    fn probability_floor_zeroes_gradients() {
        // Parallel embeddings with nu = 14 put all mass near the top of the
        // scale; the lowest bin's probability underflows the floor.
        let mut model = toy_model(
            config(ConfidenceFn::Sum, BiasScheme::None, Binning::Static, false),
            2,
        );
        model.u.row_mut(0).copy_from_slice(&[7.0, 0.0, 0.0, 0.0]);
        model.v.row_mut(0).copy_from_slice(&[7.0, 0.0, 0.0, 0.0]);
        let batch = vec![Interaction { user: 0, item: 0, rating: 0 }];
        let mut grads = model.new_grads();
        let loss = crate::train::loss_and_grad(&model, &batch, None, &mut grads).unwrap();
        assert!((loss - (-PROB_FLOOR.ln())).abs() < 1e-9);
        for g in &grads {
            assert!(g.as_slice().iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn gradients_match_finite_differences_all_configs() {
        let batch = toy_batch();
        for (fi, f) in [ConfidenceFn::Norm, ConfidenceFn::Sum, ConfidenceFn::Dot]
            .into_iter()
            .enumerate()
        {
            for (bi, bias) in [BiasScheme::None, BiasScheme::AlphaBeta, BiasScheme::MuNu]
                .into_iter()
                .enumerate()
            {
                for (gi, binning) in [Binning::Static, Binning::Adaptive].into_iter().enumerate()
                {
                    let cfg = config(f, bias, binning, false);
                    let model = toy_model(cfg, 100 + (fi * 6 + bi * 2 + gi) as u64);
                    let label = format!("lbd f={fi} bias={bi} binning={gi}");
                    gradient_check(&model, &batch, None, 1e-4, &label);
                }
            }
        }
    }

    #[test]
    fn gradients_with_separate_embeddings_and_l2() {
        let batch = toy_batch();
        let cfg = config(ConfidenceFn::Sum, BiasScheme::AlphaBeta, Binning::Adaptive, true);
        let model = toy_model(cfg, 5);
        gradient_check(&model, &batch, None, 1e-4, "lbd separate embeddings");

        // L2 path: both schemes, non-trivial weight.
        let data = crate::data::RatingDataset::from_dense(batch.clone(), 3, 3, scale10()).unwrap();
        let train_idx: Vec<u32> = (0..batch.len() as u32).collect();
        for scheme in [crate::train::L2Scheme::Uniform, crate::train::L2Scheme::FrequencyProportional] {
            let tc = crate::train::TrainConfig {
                l2_weight: 0.05,
                l2_scheme: scheme,
                ..crate::train::TrainConfig::default()
            };
            let l2 = crate::train::L2Penalty::new(&tc, &data, &train_idx);
            let model = toy_model(
                config(ConfidenceFn::Sum, BiasScheme::AlphaBeta, Binning::Static, false),
                6,
            );
            gradient_check(&model, &batch, Some(&l2), 1e-4, "lbd with l2");
        }
    }

    #[test]
    fn adaptive_zero_theta_matches_static_bitwise() {
        let cfg_a = config(ConfidenceFn::Sum, BiasScheme::AlphaBeta, Binning::Adaptive, false);
        let model = toy_model(cfg_a, 9);
        let (adaptive, _) = model.edges(1, 2);
        for (a, b) in adaptive.iter().zip(&static_edges(10)) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn bayesian_product_of_beta_pdfs() {
        // f(a0+1,b0+1) f(ai+1,bi+1) f(aj+1,bj+1) f(alpha,beta)
        // is proportional to f(a0+ai+aj+alpha, b0+bi+bj+beta).
        let (a0, ai, aj, alpha) = (0.4, 1.2, 0.9, 2.0);
        let (b0, bi, bj, beta) = (0.7, 0.3, 1.5, 3.0);
        let combined = BetaShape { alpha: a0 + ai + aj + alpha, beta: b0 + bi + bj + beta };
        let product = |x: f64| {
            beta_pdf(x, BetaShape { alpha: a0 + 1.0, beta: b0 + 1.0 }).unwrap()
                * beta_pdf(x, BetaShape { alpha: ai + 1.0, beta: bi + 1.0 }).unwrap()
                * beta_pdf(x, BetaShape { alpha: aj + 1.0, beta: bj + 1.0 }).unwrap()
                * beta_pdf(x, BetaShape { alpha, beta }).unwrap()
        };
        let ratio0 = product(0.3) / beta_pdf(0.3, combined).unwrap();
        for i in 1..20 {
            let x = i as f64 / 20.0;
            let ratio = product(x) / beta_pdf(x, combined).unwrap();
            assert!((ratio / ratio0 - 1.0).abs() < 1e-9, "not proportional at {x}");
        }
    }

    #[test]
    fn interval_transform_matches_monte_carlo() {
        // Mapping x' = x (Rmax - Rmin) + Rmin rescales the mean affinely and
        // the variance by the squared interval length; checked by sampling.
        use rand_distr::Distribution;
        let mut rng = seeded_rng(31);
        let (lo, hi) = (0.5, 5.0);
        let w = hi - lo;
        for _ in 0..5 {
            let a = rng.gen_range(0.3..8.0);
            let b = rng.gen_range(0.3..8.0);
            let shape = BetaShape { alpha: a, beta: b };
            let sampler = rand_distr::Beta::new(a, b).unwrap();
            let n = 200_000;
            let xs: Vec<f64> = (0..n).map(|_| lo + w * sampler.sample(&mut rng)).collect();
            let mean: f64 = xs.iter().sum::<f64>() / n as f64;
            let var: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
            let m4: f64 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n as f64;

            let want_mean = shape.mean() * w + lo;
            let want_var = shape.variance() * w * w;
            let se_mean = (var / n as f64).sqrt();
            let se_var = ((m4 - var * var).max(0.0) / n as f64).sqrt();
            assert!(
                (mean - want_mean).abs() < 3.0 * se_mean,
                "mean {mean} vs {want_mean} (a={a}, b={b})"
            );
            assert!(
                (var - want_var).abs() < 3.0 * se_var,
                "variance {var} vs {want_var} (a={a}, b={b})"
            );
        }
    }

    #[test]
    fn param_lists_are_aligned() {
        for bias in [BiasScheme::None, BiasScheme::AlphaBeta, BiasScheme::MuNu] {
            for binning in [Binning::Static, Binning::Adaptive] {
                for sep in [false, true] {
                    let mut model =
                        toy_model(config(ConfidenceFn::Sum, bias, binning, sep), 3);
                    let n = model.params().len();
                    assert_eq!(model.param_meta().len(), n);
                    assert_eq!(model.params_mut().len(), n);
                    let grads = model.new_grads();
                    for (g, p) in grads.iter().zip(model.params()) {
                        assert!(g.same_shape(p));
                    }
                }
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn forward_always_sums_to_one(seed in 0u64..1000, u in 0u32..3, i in 0u32..3) {
            let cfg = config(ConfidenceFn::Sum, BiasScheme::AlphaBeta, Binning::Adaptive, false);
            let mut model = toy_model(cfg, seed);
            // Random theta so the adaptive path is exercised away from zero.
            let mut rng = seeded_rng(seed ^ 0xabcd);
            for t in [model.theta_user.as_mut().unwrap(), model.theta_item.as_mut().unwrap()] {
                for x in t.as_mut_slice() {
                    *x = rng.gen_range(-1.5..1.5);
                }
            }
            let d = model.distribution(u, i).unwrap();
            let sum: f64 = d.probs().iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
            prop_assert!(d.probs().iter().all(|&p| p >= 0.0));
        }

        #[test]
        fn mu_remap_is_monotone(
            p in 0.02f64..0.98,
            x1 in 0.0f64..1.0,
            x2 in 0.0f64..1.0,
        ) {
            let map = |mu: f64| apply_mu_nu_bias(mu, 1.0, p, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0).0;
            let (lo, hi) = if x1 <= x2 { (x1, x2) } else { (x2, x1) };
            prop_assert!(map(lo) <= map(hi) + 1e-12);
        }
    }
}
