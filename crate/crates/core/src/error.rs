use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the simulation and optimization routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: {what} (expected {expected}, got {actual})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("user {0} has a zero-norm effective signature")]
    DegenerateUser(usize),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("{what} failed to converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("power candidate is unbounded: both the power and interference multipliers are zero")]
    UnboundedCandidate,

    #[error("problem too large for exhaustive search: {0}")]
    TooLarge(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Process exit status for the command-line front end: 2 for bad
    /// configuration or input, 3 for numerical failures, 4 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::InvalidParameter(_)
            | Self::DimensionMismatch { .. }
            | Self::InvalidInput(_)
            | Self::TooLarge(_)
            | Self::Config(_) => 2,
            Self::DegenerateUser(_)
            | Self::NonConvergence { .. }
            | Self::Numerical(_)
            | Self::UnboundedCandidate => 3,
            Self::Io { .. } => 4,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
