//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("domain error: {0}")]
    DomainError(String),

    #[error("alignment plan mismatch: {0}")]
    PlanMismatch(String),

    #[error("invalid injection target: teacher layer {teacher_layer} targets backbone layer {target} outside 1..={backbone_layers}")]
    InvalidTarget {
        teacher_layer: usize,
        target: usize,
        backbone_layers: usize,
    },

    #[error("unknown token {token:?}")]
    UnknownToken { token: String },

    #[error("scene constraint not satisfiable: {0}")]
    ConstraintError(String),

    #[error("index {index} out of range (len {len})")]
    IndexError { index: usize, len: usize },

    #[error("io failure: {0}")]
    IoFailure(String),

    #[error("too few samples: need at least {need}, got {got}")]
    TooFewSamples { need: usize, got: usize },

    #[error("image too small: side {side} below minimum {min}")]
    ImageTooSmall { side: usize, min: usize },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("validity refusal: {0}")]
    Validity(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::IoFailure(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::IoFailure(format!("json: {e}"))
    }
}

impl From<image::ImageError> for Error {
    fn from(e: image::ImageError) -> Self {
        Error::IoFailure(format!("png: {e}"))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
