//! Crate-wide error type.

use std::path::PathBuf;

/// Errors produced by volume I/O, resampling, augmentation, the network,
/// and the experiment harness.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("not a NIfTI-1 single file: magic bytes {found:02x?}")]
    BadMagic { found: [u8; 4] },

    #[error("unsupported NIfTI datatype code {0} (supported: 2, 4, 8, 16, 64)")]
    UnsupportedDatatype(i16),

    #[error("truncated payload: header promises {expected} bytes, file holds {got}")]
    TruncatedPayload { expected: usize, got: usize },

    #[error("bad dim field: {0}")]
    BadDim(String),

    #[error("affine matrix is singular")]
    SingularMatrix,

    #[error("control grid {0:?} too small: need at least 2 points per axis")]
    GridTooSmall((usize, usize, usize)),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid augmentation spec: {0}")]
    InvalidSpec(String),

    #[error("invalid model config: {0}")]
    InvalidConfig(String),

    #[error("bad checkpoint file: {0}")]
    BadCheckpoint(String),

    #[error("class {0:?} has no samples")]
    EmptyClass(crate::data::Label),

    #[error("reports are not comparable: {0}")]
    ModeMismatch(String),

    #[error("column {0:?} not found in CSV header")]
    MissingColumn(String),

    #[error("no usable rows or entries")]
    EmptyResult,

    #[error("inconsistent volume shapes: {0}")]
    ShapeInconsistency(String),

    #[error("invalid manifest {path}: {reason}")]
    BadManifest { path: PathBuf, reason: String },

    #[error("invalid run configuration: {0}")]
    BadRunState(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
