use thiserror::Error;

/// Errors raised by the engines, solvers and verifiers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("zero vector where a direction is required")]
    ZeroVector,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid teacher network: {0}")]
    InvalidTeacher(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("non-finite integrand value at sample {index}")]
    NonFiniteSample { index: u64 },

    #[error("teacher {teacher} has no student within {delta_max:.3e} rad")]
    Uncovered { teacher: usize, delta_max: f64 },

    #[error("matrix is not positive semidefinite within {tolerance:e}")]
    NotPsd { tolerance: f64 },

    #[error("nnls did not converge after {iterations} iterations (kkt residual {residual:e})")]
    NnlsNoConvergence { iterations: usize, residual: f64 },

    #[error("eigensolver did not converge after {sweeps} sweeps")]
    EigenNoConvergence { sweeps: usize },

    #[error("divergence: {0}")]
    Divergence(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
