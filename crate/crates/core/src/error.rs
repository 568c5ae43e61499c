use thiserror::Error;

/// Errors produced by the control-aware identification pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpcError {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite state at step {step}")]
    NonFinite { step: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("model has no free parameters (p = 0)")]
    DegenerateParameterization,

    #[error("parameter vector outside its box at component {index}")]
    OutOfBox { index: usize },

    #[error(
        "{context} did not converge in {iterations} iterations (residual {residual:e})"
    )]
    NonConvergence {
        context: &'static str,
        iterations: usize,
        residual: f64,
        /// Best iterate reached, as `f64` regardless of the working precision.
        best: Vec<f64>,
    },

    #[error("strong convexity violated: {0}")]
    StrongConvexity(String),

    #[error("io: {0}")]
    Io(String),

    #[error("format: {0}")]
    Format(String),
}

impl SpcError {
    pub(crate) fn dims(context: &'static str, expected: usize, actual: usize) -> Self {
        SpcError::DimensionMismatch {
            context,
            expected,
            actual,
        }
    }
}

impl From<std::io::Error> for SpcError {
    fn from(e: std::io::Error) -> Self {
        SpcError::Io(e.to_string())
    }
}

impl From<csv::Error> for SpcError {
    fn from(e: csv::Error) -> Self {
        SpcError::Format(e.to_string())
    }
}

impl From<serde_json::Error> for SpcError {
    fn from(e: serde_json::Error) -> Self {
        SpcError::Format(e.to_string())
    }
}

pub type Result<T, E = SpcError> = std::result::Result<T, E>;
