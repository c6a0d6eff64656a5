use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input data violates a documented invariant (bad weights, NaN, empty set...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("duplicate id {0:?}")]
    DuplicateId(String),

    #[error(
        "sinkhorn did not converge after {iterations} iterations \
         (marginal error {marginal_error:.3e}, tolerance {tolerance:.3e})"
    )]
    NotConverged {
        iterations: usize,
        marginal_error: f64,
        tolerance: f64,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the numerical solver rather than the inputs.
    pub fn is_solver_failure(&self) -> bool {
        matches!(
            self,
            Error::NotConverged { .. } | Error::DimensionMismatch { .. }
        )
    }
}
