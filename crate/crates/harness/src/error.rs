use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Core(#[from] speckle_core::CoreError),
    #[error(transparent)]
    Net(#[from] speckle_net::NetError),
    #[error("missing {what}: {path}")]
    MissingArtifact { what: &'static str, path: PathBuf },
    #[error("invalid experiment: {0}")]
    Invalid(String),
    #[error("signal space of {0} classes is too large to enumerate")]
    SpaceTooLarge(u128),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

/// Fails with [`HarnessError::MissingArtifact`] unless `path` exists.
pub fn require(path: impl Into<PathBuf>, what: &'static str) -> Result<PathBuf> {
    let path = path.into();
    if path.exists() {
        Ok(path)
    } else {
        Err(HarnessError::MissingArtifact { what, path })
    }
}
