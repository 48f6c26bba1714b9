use thiserror::Error;

use crate::graph::ValidationReport;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid graph: {0}")]
    Validation(String),

    #[error("graph rejected:\n{0}")]
    InvalidGraph(Box<ValidationReport>),

    #[error("walk count from {from} to {to} in {steps} steps overflows u128")]
    CountOverflow {
        from: usize,
        to: usize,
        steps: usize,
    },

    #[error(
        "power iteration did not converge after {iterations} iterations (residual {residual:e})"
    )]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("singular balance system: {0}")]
    Singular(String),

    #[error("not a generator: {0}")]
    NotGenerator(String),

    #[error("flow has mass {value:e} on non-edge {from}->{to}")]
    SupportViolation { from: usize, to: usize, value: f64 },

    #[error("{count} walks exceed the enumeration cap of {cap}; use fewer steps")]
    EnumerationCap { count: u128, cap: usize },

    #[error("certification failed: {0}")]
    Certification(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
