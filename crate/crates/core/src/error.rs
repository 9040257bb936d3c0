use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum RmcError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical failure in {context} after {iterations} iterations")]
    NumericalFailure {
        context: &'static str,
        iterations: usize,
    },

    #[error("model collapsed: {0}")]
    ModelCollapsed(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("unsupported at scale: {0}")]
    UnsupportedAtScale(String),
}

pub type Result<T> = std::result::Result<T, RmcError>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(RmcError::InvalidArgument(msg.into()))
}

impl RmcError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        RmcError::Io {
            path: path.into(),
            source,
        }
    }
}
