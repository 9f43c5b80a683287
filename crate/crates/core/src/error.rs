use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, PartialEq)]
pub enum Error {
    #[error("degenerate splat scale {0}")]
    DegenerateScale(f64),
    #[error("ray does not intersect splat")]
    NoIntersection,
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("parameter vector length {got}, expected {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("image shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize, usize), (usize, usize, usize)),
    #[error("image {height}x{width} smaller than SSIM window {window}")]
    TooSmall { height: usize, width: usize, window: usize },
    #[error("empty point set")]
    EmptyPointSet,
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("malformed JSON in {path}: {message}")]
    MalformedJson { path: PathBuf, message: String },
    #[error("dimension mismatch in {path}: {message}")]
    DimensionMismatch { path: PathBuf, message: String },
    #[error("checkpoint version {found}, expected {expected}")]
    VersionMismatch { expected: u32, found: u32 },
    #[error("corrupt header in {path}: {message}")]
    CorruptHeader { path: PathBuf, message: String },
    #[error("property count mismatch: header has {header}, meta implies {meta}")]
    PropertyCountMismatch { header: usize, meta: usize },
    #[error("config error: {0}")]
    Config(String),
    #[error("unknown config key `{0}`")]
    UnknownConfigKey(String),
    #[error("non-finite loss at iteration {iteration}")]
    NonFiniteLoss { iteration: usize },
    #[error("image codec error in {path}: {message}")]
    Image { path: PathBuf, message: String },
    #[error("I/O error on {path}: {message}")]
    Io { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, err: std::io::Error) -> Self {
        let path = path.into();
        if err.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io {
                path,
                message: err.to_string(),
            }
        }
    }
}
