use thiserror::Error;

/// Errors raised by the estimation pipeline.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum BveError {
    #[error("degenerate direction: {0}")]
    DegenerateDirection(&'static str),
    #[error("singular or non-positive-definite covariance")]
    SingularCovariance,
    #[error("numerical breakdown: {0}")]
    NumericalBreakdown(&'static str),
    #[error("unknown experiment `{0}` (expected E1..E10)")]
    UnknownExperiment(String),
    #[error("empty input")]
    EmptyInput,
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
}

pub type Result<T, E = BveError> = std::result::Result<T, E>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> BveError {
    BveError::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
