use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("index {index} out of range (size {size})")]
    IndexOutOfRange { index: usize, size: usize },

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("integration failed at t = {time:.6e} s: {reason}")]
    Integration { time: f64, reason: String },

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("readout degenerate: {0}")]
    ReadoutDegenerate(String),

    #[error("ill-conditioned tomography probes: {0}")]
    IllConditioned(String),

    #[error("minimizer failed: {0}")]
    Minimizer(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
