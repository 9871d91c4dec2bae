use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("mask has no in-mask voxels")]
    EmptyMask,

    #[error("coordinate ({x}, {y}, {z}) is outside the mask")]
    OutOfMask { x: usize, y: usize, z: usize },

    #[error("subset is empty")]
    EmptySubset,

    #[error("lambda {lambda} outside the admissible range [{min}, {max}] of the {family} family")]
    LambdaOutOfRange {
        family: &'static str,
        lambda: f64,
        min: f64,
        max: f64,
    },

    #[error("hypothesis index {index} outside 1..={m}")]
    IndexOutOfRange { index: usize, m: usize },

    #[error("exhaustive oracle refused: m = {0} exceeds 12")]
    OracleTooLarge(usize),

    #[error("{}: row {row}, column {col}: {message}", path.display())]
    Matrix {
        path: PathBuf,
        row: usize,
        col: usize,
        message: String,
    },

    #[error("NIfTI: {0}")]
    Nifti(#[from] crate::io::nifti::NiftiError),

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
