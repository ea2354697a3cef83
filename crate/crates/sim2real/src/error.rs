use std::path::PathBuf;

use cfo_core::CoreError;
use cfo_nn::NnError;
use thiserror::Error;

pub type Result<T, E = Sim2RealError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Sim2RealError {
    #[error(transparent)]
    Core(#[from] CoreError),

    #[error(transparent)]
    Nn(#[from] NnError),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("frame configuration mismatch: {0}")]
    ConfigMismatch(String),

    #[error("no capture frames supplied")]
    EmptyCaptures,

    #[error("malformed capture {path}: {reason}")]
    Capture { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Sim2RealError {
    pub(crate) fn capture(path: &std::path::Path, reason: impl Into<String>) -> Self {
        Self::Capture { path: path.to_path_buf(), reason: reason.into() }
    }

    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), source }
    }
}
