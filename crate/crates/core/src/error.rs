use alloc::string::String;

use thiserror::Error;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid resolution {height}x{width}: both sides must be at least {min}")]
    InvalidResolution {
        height: usize,
        width: usize,
        min: usize,
    },
    #[error("mask generation produced no valid mask after {attempts} attempts")]
    EmptyMask { attempts: usize },
    #[error("shape ForegroundMask requires a foreground map")]
    MissingForeground,
    #[error("pasted region did not fit inside the image after {attempts} attempts")]
    PasteOutOfBounds { attempts: usize },
    #[error("inpainting backend failed: {0}")]
    BackendFailure(String),
    #[error("region/text encoder failed: {0}")]
    EncoderFailure(String),
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("cannot select from an empty batch")]
    EmptyBatch,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: usize, detail: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
