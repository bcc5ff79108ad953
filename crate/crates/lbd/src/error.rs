//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument fell outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// The continued-fraction evaluation did not converge.
    #[error("incomplete beta did not converge for x={x}, alpha={alpha}, beta={beta}")]
    NoConvergence { x: f64, alpha: f64, beta: f64 },

    /// A malformed record in an input rating stream.
    #[error("line {line}: {msg}")]
    Record { line: usize, msg: String },

    /// An operation was invoked on an object in the wrong state.
    #[error("invalid state: {0}")]
    State(String),

    /// A malformed checkpoint, manifest, or config payload.
    #[error("format error: {0}")]
    Format(String),

    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    Diverged { epoch: usize, batch: usize, loss: f64 },

    /// Correlation is undefined for the given inputs.
    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
