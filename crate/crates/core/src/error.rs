use std::path::PathBuf;

use thiserror::Error;

use crate::net::MlpParams;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum ZubovError {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("unsupported dimension: {0}")]
    UnsupportedDimension(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Training blew up even after the learning-rate retry. Carries the last
    /// parameters for which the loss was finite.
    #[error("training aborted at iteration {iteration}, epoch {epoch}: {reason}")]
    TrainingDiverged {
        iteration: usize,
        epoch: usize,
        reason: String,
        last_good: Box<MlpParams>,
    },
}

pub type Result<T> = std::result::Result<T, ZubovError>;

pub(crate) fn arg_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(ZubovError::Argument(msg.into()))
}

impl ZubovError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        ZubovError::Io {
            path: path.into(),
            source,
        }
    }
}
