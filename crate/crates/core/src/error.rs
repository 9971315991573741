use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("pixel {index} has non-binary value {value}")]
    NonBinaryPixel { index: usize, value: f64 },

    #[error("intensity {index} is negative or non-finite ({value})")]
    InvalidIntensity { index: usize, value: f64 },

    #[error("invalid signal: {0}")]
    InvalidSignal(String),

    #[error("reference signal is zero")]
    ZeroReference,

    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),

    #[error("calibration set is empty")]
    EmptyCalibration,

    #[error("every transmission-matrix column failed calibration; signal is unrecoverable")]
    Unrecoverable,

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;
