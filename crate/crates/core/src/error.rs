use thiserror::Error;

/// Errors produced by the engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("shot-noise calibration failed: shot variance {shot} must exceed dark variance {dark}")]
    CalibrationFailure { shot: f64, dark: f64 },

    #[error("empty data: {0}")]
    EmptyData(&'static str),

    #[error("insufficient data: need at least {needed} samples, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("posterior undefined: K = 0 with no observations")]
    UndefinedPosterior,

    #[error("leading-order incompatibility constant needs dq*dp <= 0.1, got {0}")]
    Precision(f64),

    #[error("estimator failure: {0}")]
    EstimatorFailure(String),

    #[error("bin index {index} does not fit in {bits} bits")]
    Encoding { index: i64, bits: u32 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
