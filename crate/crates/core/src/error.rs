use thiserror::Error;

/// Failures raised by the Kalman filter cores.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum FilterError {
    #[error("invalid unscented-transform parameters: {0}")]
    InvalidParams(String),
    #[error("dimension mismatch: {what} (expected {expected}, got {got})")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("covariance is not positive definite (Cholesky pivot {pivot})")]
    NotPositiveDefinite { pivot: usize },
    #[error("propagation diverged: non-finite value in sigma point {index}")]
    Divergence { index: usize },
    #[error("innovation covariance is singular")]
    SingularInnovation,
    #[error(
        "posterior covariance lost positive definiteness (smallest eigenvalue {min_eigenvalue:e})"
    )]
    Conditioning { min_eigenvalue: f64 },
    #[error("noise matrix rejected: {0}")]
    InvalidNoise(String),
}

pub type FilterResult<T> = Result<T, FilterError>;
