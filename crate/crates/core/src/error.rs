use std::path::PathBuf;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A file could not be parsed as the format it claims to be.
    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    /// A frame stream violated a stream-level contract (dimensions, ordering).
    #[error("stream error: {0}")]
    Stream(String),

    /// Input data failed a declared validation rule.
    #[error("validation error: {0}")]
    Validation(String),

    /// Missing or inconsistent configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// Model training could not proceed (degenerate data, missing class, ...).
    #[error("training error: {0}")]
    Train(String),

    /// A numeric procedure failed to produce a usable result.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Two aligned sequences disagree on their frame ranges.
    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
