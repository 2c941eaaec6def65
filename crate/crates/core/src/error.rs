use thiserror::Error;

/// Errors raised by the solver library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("rejected geometry: {0}")]
    RejectedGeometry(String),
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("newton did not converge in {iterations} iterations (step {step:?}); residual history {history:?}")]
    Nonconvergence {
        step: Option<usize>,
        iterations: usize,
        history: Vec<f64>,
    },
    #[error("gmres stagnated after {iterations} iterations at relative residual {relative_residual:e}")]
    Stagnation {
        iterations: usize,
        relative_residual: f64,
    },
    #[error("loss became NaN (epoch {epoch}, batch {batch}, lr {lr:e})")]
    NanLoss { epoch: usize, batch: usize, lr: f64 },
    #[error("model incompatible with patch layout: {0}")]
    ModelIncompatible(String),
    #[error("invalid configuration at `{key}`: {message}")]
    Config { key: String, message: String },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("file format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
