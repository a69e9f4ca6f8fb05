use thiserror::Error;

/// Errors produced by the solvers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("{quantity} = {value:e} is outside the admissible domain ({reason})")]
    Domain { quantity: &'static str, value: f64, reason: &'static str },

    #[error("{method} did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { method: &'static str, iterations: usize, residual: f64 },

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("time step {dt:e} s exceeds the stability limit {limit:e} s")]
    StepTooLarge { dt: f64, limit: f64 },

    #[error("negative concentration {value:e} in `{field}` at node {node}")]
    Negativity { field: &'static str, node: usize, value: f64 },

    #[error("grid mismatch: expected {expected} nodes, got {got}")]
    GridMismatch { expected: usize, got: usize },

    #[error("certificate check failed: {}", .0.join("; "))]
    Verification(Vec<String>),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter { name, reason: reason.into() }
}
