use thiserror::Error;

pub type Result<T, E = CoreError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("empty input")]
    EmptyInput,

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite sample at index {0}")]
    NonFinite(usize),

    #[error("signal has zero power")]
    ZeroPower,

    #[error("estimate undefined: correlation sum has zero magnitude")]
    EstimateUndefined,

    #[error("channel has {taps} taps but cyclic prefix is only {cp_len} samples")]
    ChannelTooLong { taps: usize, cp_len: usize },

    #[error("profile config: {0}")]
    ProfileConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
