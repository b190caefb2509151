use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("{context}: {path}: {source}")]
    Io {
        context: &'static str,
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("training diverged at iteration {iteration}: non-finite {what}")]
    TrainingDiverged { iteration: usize, what: &'static str },

    #[error("oracle unavailable: {0}")]
    OracleUnavailable(String),

    #[error("oracle protocol error: {message} (payload: {excerpt})")]
    Protocol { message: String, excerpt: String },

    #[error("oracle failed: {0}")]
    Oracle(String),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn io(context: &'static str, path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            context,
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by the oracle rather than by the inputs.
    pub fn is_oracle_failure(&self) -> bool {
        matches!(
            self,
            Error::OracleUnavailable(_) | Error::Protocol { .. } | Error::Oracle(_)
        )
    }
}
