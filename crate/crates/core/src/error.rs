//! Crate-wide error type.
//!
//! Errors are grouped by how a batch front end should react to them:
//! validation errors (bad inputs, exit code 1), numerical errors (failed
//! convergence or degenerate data, exit code 2) and I/O errors (exit code 3).

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input data violates a documented precondition.
    #[error("validation: {0}")]
    Validation(String),

    /// A row of an input file could not be parsed.
    #[error("parse error in {path} at line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    /// An optimizer ran out of its iteration budget. Carries the best
    /// iterate found and the gradient norm at that point.
    #[error("optimizer did not converge after {iterations} iterations (cost {cost:.6e}, grad norm {grad_norm:.3e})")]
    Convergence {
        iterations: usize,
        cost: f64,
        grad_norm: f64,
        best: Vec<f64>,
    },

    /// A numerical operation is undefined for the given data
    /// (zero denominator, state on a boundary, non-mean-reverting fit, ...).
    #[error("numerical: {0}")]
    Numerical(String),

    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    /// Process exit code for the batch CLI: 1 validation, 2 numerical, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation(_) => 1,
            Error::Convergence { .. } | Error::Numerical(_) => 2,
            Error::Parse { .. } | Error::Io(_) | Error::Csv(_) | Error::Json(_) => 3,
        }
    }
}
