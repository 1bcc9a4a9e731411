//! Crate-wide error type and result alias.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("corrupt header in {path}: {reason}")]
    CorruptHeader { path: PathBuf, reason: String },

    #[error("unsupported voxel datatype code {code} in {path}")]
    UnsupportedDatatype { path: PathBuf, code: i16 },

    #[error("expected a 3-d volume, header of {path} declares {ndim} dimensions")]
    Dimensionality { path: PathBuf, ndim: i16 },

    #[error("missing sidecar {path}")]
    MissingSidecar { path: PathBuf },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("wrong intensity kind: expected {expected}, got {actual}")]
    WrongIntensityKind { expected: String, actual: String },

    #[error("degenerate intensity range: {0}")]
    DegenerateRange(String),

    #[error("invalid volume: {0}")]
    InvalidVolume(String),

    #[error("voxel value {value} is not a class index below {num_classes}")]
    InvalidLabel { value: f32, num_classes: u8 },

    #[error("patch shape {patch:?} does not fit inside volume shape {volume:?}")]
    PatchExceedsVolume {
        patch: (usize, usize, usize),
        volume: (usize, usize, usize),
    },

    #[error("voxel {index:?} is covered by no patch during reassembly")]
    CoverageGap { index: (usize, usize, usize) },

    #[error("shape {shape:?} is not divisible by {divisor} as the network depth requires")]
    IndivisibleShape {
        shape: (usize, usize, usize),
        divisor: usize,
    },

    #[error("invalid fold count {k} for {n} samples")]
    InvalidFoldCount { k: usize, n: usize },

    #[error("index {index} out of range for {what} of extent {extent}")]
    IndexOutOfRange {
        what: String,
        index: usize,
        extent: usize,
    },

    #[error("non-finite {0}")]
    NonFinite(String),

    #[error("configuration error: {0}")]
    Config(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn corrupt_header(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::CorruptHeader {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
