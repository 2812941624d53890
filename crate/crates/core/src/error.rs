use thiserror::Error;

/// Errors produced by the detection, inference and calibration routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("observation has length {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("detector has already declared a change at n = {n}; reset before stepping again")]
    AlreadyDeclared { n: u64 },

    #[error("detector has not declared a change")]
    NotDeclared,

    #[error("expected {expected} post-declaration observations, got {got}")]
    ExtrasLength { expected: usize, got: usize },

    #[error("stream ended after {got} of {expected} post-declaration observations")]
    ExtrasExhausted { expected: usize, got: usize },

    #[error("detector state does not match configuration: {0}")]
    ConfigMismatch(String),

    #[error("malformed snapshot: {0}")]
    Snapshot(String),

    #[error("input data: {0}")]
    Data(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("preset file: {0}")]
    Preset(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
