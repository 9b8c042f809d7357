use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite value at {0}")]
    NonFinite(String),
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Core(#[from] endoseg_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, NetError>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(NetError::InvalidArgument(msg.into()))
}
