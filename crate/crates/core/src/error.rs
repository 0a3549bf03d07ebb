use std::path::PathBuf;

use thiserror::Error;

/// Failure of a projection through the pinhole model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum ProjectionError {
    /// The camera-frame depth is at or below `z_min`.
    #[error("point is behind the camera (depth at or below z_min)")]
    BehindCamera,
}

/// A subpixel sample left the valid interior of the image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("sample location outside the valid image interior")]
pub struct OutOfBounds;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Projection(#[from] ProjectionError),
    #[error(transparent)]
    OutOfBounds(#[from] OutOfBounds),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("empty point set: {0}")]
    EmptySet(&'static str),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("parameter `{name}` = {value} outside [{lo}, {hi}]")]
    OutOfRange { name: String, value: f64, lo: f64, hi: f64 },
    #[error("objective returned a non-finite value or gradient")]
    NonFiniteObjective,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("rejection sampling exhausted after {0} attempts")]
    SamplingExhausted(usize),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("{0} already exists (use --force to overwrite)")]
    AlreadyExists(PathBuf),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format { path: path.into(), msg: msg.into() }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
