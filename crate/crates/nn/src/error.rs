use thiserror::Error;

pub type Result<T, E = NnError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("batch norm needs at least 2 samples per batch in training mode")]
    BatchTooSmall,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("checkpoint: bad magic bytes")]
    BadMagic,

    #[error("checkpoint: format version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("checkpoint: architecture hash does not match this model")]
    ArchitectureMismatch,

    #[error("checkpoint: truncated or malformed ({0})")]
    Malformed(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
