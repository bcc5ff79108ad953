//! Shared model plumbing: parameter tensors, metadata for the optimizer, and
//! the common interface all rating models expose to training and evaluation.

use serde::{Deserialize, Serialize};

use crate::data::{Interaction, RatingScale};
use crate::dist::DiscreteRatingDistribution;
use crate::error::{Error, Result};

/// A dense row-major parameter block. Scalars are 1x1, per-entity vectors are
/// rows x 1, embeddings are rows x cols.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TensorRepr", into = "TensorRepr")]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// Serialized tensor form; deserialization re-validates the shape and
/// entry finiteness.
#[derive(Serialize, Deserialize)]
struct TensorRepr {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl TryFrom<TensorRepr> for Tensor {
    type Error = Error;
    fn try_from(r: TensorRepr) -> Result<Self> {
        if r.data.iter().any(|x| !x.is_finite()) {
            return Err(Error::Format("non-finite tensor entry".into()));
        }
        Tensor::from_parts(r.rows, r.cols, r.data)
    }
}

impl From<Tensor> for TensorRepr {
    fn from(t: Tensor) -> TensorRepr {
        TensorRepr { rows: t.rows, cols: t.cols, data: t.data }
    }
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn scalar(value: f64) -> Self {
        Self { rows: 1, cols: 1, data: vec![value] }
    }

    pub fn from_parts(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Format(format!(
                "tensor data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn fill(&mut self, value: f64) {
        self.data.fill(value);
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    /// self += other, shapes must match.
    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, k: f64) {
        for a in &mut self.data {
            *a *= k;
        }
    }
}

/// How the L2 scheme treats a parameter tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum L2Class {
    /// Not regularized (biases, thresholds, bin parameters).
    None,
    /// User-embedding rows, weighted by user interaction counts under the
    /// frequency-proportional scheme.
    UserEmbedding,
    /// Item-embedding rows.
    ItemEmbedding,
}

/// Domain constraint re-established by projection after each optimizer step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Constraint {
    Free,
    /// Open interval (0, 1), projected to [1e-4, 1 - 1e-4].
    OpenUnit,
    /// Strictly positive, projected to [1e-8, inf).
    Positive,
}

impl Constraint {
    pub fn project(&self, value: f64) -> f64 {
        match self {
            Constraint::Free => value,
            Constraint::OpenUnit => value.clamp(1e-4, 1.0 - 1e-4),
            Constraint::Positive => value.max(1e-8),
        }
    }
}

/// Static description of one parameter tensor, aligned with the order
/// returned by [`RatingModel::params`].
#[derive(Debug, Clone, Copy)]
pub struct ParamMeta {
    pub name: &'static str,
    pub l2: L2Class,
    pub constraint: Constraint,
}

impl ParamMeta {
    pub const fn free(name: &'static str) -> Self {
        Self { name, l2: L2Class::None, constraint: Constraint::Free }
    }

    pub const fn user_embedding(name: &'static str) -> Self {
        Self { name, l2: L2Class::UserEmbedding, constraint: Constraint::Free }
    }

    pub const fn item_embedding(name: &'static str) -> Self {
        Self { name, l2: L2Class::ItemEmbedding, constraint: Constraint::Free }
    }

    pub const fn open_unit(name: &'static str) -> Self {
        Self { name, l2: L2Class::None, constraint: Constraint::OpenUnit }
    }

    pub const fn positive(name: &'static str) -> Self {
        Self { name, l2: L2Class::None, constraint: Constraint::Positive }
    }
}

/// The interface shared by every rating model in the crate.
///
/// Gradient accumulation contract: `accumulate_batch` adds the *sum* of
/// per-example gradients of the data term into `grads` (one tensor per
/// parameter, same order as [`params`](Self::params)) and returns the sum of
/// per-example losses. The caller divides by the batch size and applies
/// regularization; see [`crate::train`].
pub trait RatingModel {
    fn scale(&self) -> RatingScale;
    fn num_users(&self) -> usize;
    fn num_items(&self) -> usize;

    /// Full predicted rating distribution for one user-item pair.
    fn distribution(&self, user: u32, item: u32) -> Result<DiscreteRatingDistribution>;

    /// The model's rating-mean estimate used for regression and ranking,
    /// clipped to the scale range.
    fn mean_estimate(&self, user: u32, item: u32) -> Result<f64>;

    fn param_meta(&self) -> Vec<ParamMeta>;
    fn params(&self) -> Vec<&Tensor>;
    fn params_mut(&mut self) -> Vec<&mut Tensor>;

    /// Accumulate summed data-term loss and gradients over a batch.
    fn accumulate_batch(&self, batch: &[Interaction], grads: &mut [Tensor]) -> Result<f64>;

    /// Zeroed gradient buffers shaped like the parameters.
    fn new_grads(&self) -> Vec<Tensor> {
        self.params().iter().map(|t| Tensor::zeros(t.rows(), t.cols())).collect()
    }
}

/// Model selector used by checkpoints and the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Mf,
    Cmf,
    OrdrecU,
    OrdrecUi,
    LbdS,
    LbdA,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] = [
        ModelKind::Mf,
        ModelKind::Cmf,
        ModelKind::OrdrecU,
        ModelKind::OrdrecUi,
        ModelKind::LbdS,
        ModelKind::LbdA,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Mf => "mf",
            ModelKind::Cmf => "cmf",
            ModelKind::OrdrecU => "ordrec-u",
            ModelKind::OrdrecUi => "ordrec-ui",
            ModelKind::LbdS => "lbd-s",
            ModelKind::LbdA => "lbd-a",
        }
    }

    /// Whether the model carries a usable confidence signal. Point-prediction
    /// MF does not, so correlation analysis is skipped for it.
    pub fn has_confidence(&self) -> bool {
        !matches!(self, ModelKind::Mf)
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mf" => Ok(ModelKind::Mf),
            "cmf" => Ok(ModelKind::Cmf),
            "ordrec-u" => Ok(ModelKind::OrdrecU),
            "ordrec-ui" => Ok(ModelKind::OrdrecUi),
            "lbd-s" => Ok(ModelKind::LbdS),
            "lbd-a" => Ok(ModelKind::LbdA),
            other => Err(Error::Format(format!(
                "unknown model kind {other:?} (expected one of mf, cmf, ordrec-u, ordrec-ui, lbd-s, lbd-a)"
            ))),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}
