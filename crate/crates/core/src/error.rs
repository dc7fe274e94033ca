use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {left:?} vs {right:?}")]
    DimensionMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("invalid dimensions {width}x{height}")]
    InvalidDimensions { width: usize, height: usize },

    #[error("data length {len} does not match {width}x{height}")]
    DataLength {
        width: usize,
        height: usize,
        len: usize,
    },

    #[error("value {value} at index {index} is out of range")]
    OutOfRange { index: usize, value: f64 },

    #[error("mask has no background pixels")]
    EmptyBackground,

    #[error("mask has no edge pixels")]
    NoEdge,

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("histogram bin count mismatch: {0} vs {1}")]
    BinMismatch(usize, usize),

    #[error("no matching prediction/ground-truth pairs")]
    NoPairs,

    #[error("size mismatch in pairs: {}", .0.join(", "))]
    PairSizeMismatch(Vec<String>),

    #[error("no masks found in {0}")]
    NoMasks(PathBuf),

    #[error("unsupported image {path}: {reason}")]
    UnsupportedImage { path: PathBuf, reason: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("training diverged at step {step}: loss is not finite")]
    Diverged { step: usize },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("image codec: {0}")]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
