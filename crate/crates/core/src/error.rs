use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum ModensError {
    /// An argument violated a documented precondition.
    #[error("domain error: {0}")]
    Domain(String),

    /// A configuration value or combination of inputs is unusable.
    #[error("configuration error: {0}")]
    Config(String),

    /// The request is valid but deliberately refused (e.g. an oracle that would be too costly).
    #[error("refused: {0}")]
    Refused(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A condition that valid inputs can never trigger.
    #[error("internal error: {0}")]
    Internal(String),
}

pub type Result<T, E = ModensError> = std::result::Result<T, E>;

impl ModensError {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        ModensError::Domain(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        ModensError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        ModensError::Parse {
            path: path.into(),
            message: message.into(),
        }
    }
}
