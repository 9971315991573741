use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid network config: {0}")]
    Config(String),
    #[error("backward called without a cached training forward pass")]
    NoCache,
    #[error("empty dataset: {0}")]
    EmptyDataset(&'static str),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NetError>;
