use thiserror::Error;

/// Errors surfaced by the simulation library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Shape(String),

    #[error("lifted dimension {requested} exceeds the configured maximum {max}")]
    Sizing { requested: usize, max: usize },

    #[error("matrix is not Hermitian: deviation {deviation:.3e} exceeds {tolerance:.3e}")]
    NotHermitian { deviation: f64, tolerance: f64 },

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("step size too large: {0}")]
    StepSize(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("argument out of range: {0}")]
    Range(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("state degenerated: trace vanished after positivity clipping")]
    DegenerateState,

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
