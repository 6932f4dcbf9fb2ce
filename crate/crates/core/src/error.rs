use thiserror::Error;

/// Errors raised by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    Dimension {
        context: &'static str,
        expected: String,
        found: String,
    },

    #[error("basis columns are not orthonormal (||V^T V - I||_F = {defect:.3e})")]
    NotOrthonormal { defect: f64 },

    #[error("correlation matrix is indefinite (smallest eigenvalue {min_eigenvalue:.3e})")]
    IndefiniteCorrelation { min_eigenvalue: f64 },

    #[error("step matrix (I - h Psi) is singular at step {step}")]
    SingularStep { step: usize },

    #[error("non-finite state on path {path} at step {step}")]
    NonFinite { path: usize, step: usize },

    #[error("non-finite value in {context} at grid index {index}")]
    NonFiniteMoment { context: &'static str, index: usize },

    #[error("sequence too short for {context}: need at least {required}, got {got}")]
    TooShort {
        context: &'static str,
        required: usize,
        got: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("container format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_err(context: &'static str, expected: impl ToString, found: impl ToString) -> Error {
    Error::Dimension {
        context,
        expected: expected.to_string(),
        found: found.to_string(),
    }
}
