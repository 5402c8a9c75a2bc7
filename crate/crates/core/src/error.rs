use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("{0} must not be empty")]
    Empty(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("target is not one-hot")]
    NotOneHot,

    #[error("insufficient data: need {needed} training rows, have {available}")]
    InsufficientData { needed: usize, available: usize },

    #[error("OV is undefined: mean squared logit norm {0:e} is below the degeneracy threshold")]
    DegenerateDenominator(f64),

    #[error("OV is undefined for all {0} samples (degenerate denominators)")]
    AllSamplesDegenerate(usize),

    #[error("parameter count {params} exceeds the Jacobian cap {cap}")]
    CapExceeded { params: usize, cap: usize },

    #[error("correlation undefined: {0} has zero variance")]
    ZeroVariance(&'static str),

    #[error("bad IDX magic in {path}: expected {expected}, found {found}")]
    BadMagic { path: PathBuf, expected: u32, found: u32 },

    #[error("truncated IDX file {path}: expected {expected} bytes, found {found}")]
    Truncated { path: PathBuf, expected: usize, found: usize },

    #[error("image/label count mismatch: {images} images, {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
