use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },

    /// The right-hand matrix of a generalized eigenproblem is not positive definite.
    #[error("singular pencil: {0}")]
    SingularPencil(String),

    #[error("{what} did not converge after {iterations} iterations")]
    NoConvergence { what: &'static str, iterations: usize },

    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Pathwise zero-forcing split needs more spatial dimensions than available.
    #[error("infeasible path partition at {node}: {required} directions required, {available} available")]
    Infeasible {
        node: String,
        required: usize,
        available: usize,
    },

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dims(context: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        Error::DimensionMismatch {
            context,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    /// Process exit code for the CLI: 1 for configuration problems, 2 for numeric ones.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Io { .. } | Error::Validation(_) => 1,
            _ => 2,
        }
    }
}
