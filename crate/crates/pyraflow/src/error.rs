//! Error type shared by every module.

use thiserror::Error;

/// Errors produced by pyraflow operations.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite input: {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("no valid pixels")]
    NoValidPixels,

    #[error("parameters are identical; beta_eff is undefined")]
    IdenticalParameters,

    #[error("descent diverged at iteration {iter}")]
    Diverged { iter: usize },

    #[error("value out of encodable range: {0}")]
    OutOfRange(String),

    #[error("format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
