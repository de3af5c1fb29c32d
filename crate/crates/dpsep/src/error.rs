use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not positive definite ({0})")]
    NotPositiveDefinite(&'static str),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("Renyi order {0} outside the supported range")]
    UnsupportedOrder(f64),

    #[error("no noise multiplier in [{lo}, {hi}] reaches epsilon {epsilon}")]
    CalibrationOutOfRange { epsilon: f64, lo: f64, hi: f64 },

    #[error("privacy spec is missing a calibrated noise multiplier")]
    CalibrationMissing,

    #[error("more than half of the updates in pass {pass} failed ({failed}/{total})")]
    DegenerateRun {
        pass: usize,
        failed: usize,
        total: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("projection dims ({0}, {1}) out of range for dimension {2}")]
    DimensionOutOfRange(usize, usize, usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
