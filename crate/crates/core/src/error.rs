use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("scene contains no Gaussians")]
    EmptyScene,

    #[error("2D covariance is not invertible (det = {det:e})")]
    DegenerateCovariance { det: f64 },

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("quaternion norm {norm:e} is too small to normalize")]
    ZeroQuaternion { norm: f64 },

    #[error("point cloud is empty")]
    EmptyCloud,

    #[error("mask selects no valid pixels")]
    EmptyMask,

    #[error("image {width}x{height} is too small (need at least {min_width}x{min_height})")]
    TooSmall {
        width: usize,
        height: usize,
        min_width: usize,
        min_height: usize,
    },

    #[error("need at least 2 depth pairs, found {found}")]
    InsufficientPairs { found: usize },

    #[error("monocular depth has no variance; scale/shift fit is degenerate")]
    DegenerateFit,

    #[error("mesh has zero total surface area")]
    DegenerateMesh,

    #[error("mesh file contains no faces")]
    NoFaces,

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("fixture error: {0}")]
    Fixture(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(expected: impl ToString, actual: impl ToString) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn parse(offset: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            offset,
            message: message.into(),
        }
    }
}
