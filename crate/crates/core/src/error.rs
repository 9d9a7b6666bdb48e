use std::path::PathBuf;

use thiserror::Error;

use crate::io::FormatError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("map dimensions must be at least 1x1, got {height}x{width}")]
    EmptyDimensions { height: usize, width: usize },

    #[error("expected {expected} values for the declared dimensions, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("value {value} at index {index} is outside [0, 1] or not finite")]
    ValueOutOfRange { index: usize, value: f32 },

    #[error("threshold {0} is outside [0, 1] or not finite")]
    InvalidThreshold(f32),

    #[error("non-finite tensor value at index {0}")]
    NonFinite(usize),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("expected a derivative stack of order {expected}, got order {actual}")]
    WrongOrder { expected: u8, actual: u8 },

    #[error("at least one map is required")]
    NoMaps,

    #[error("invalid ensemble config: {0}")]
    InvalidConfig(String),

    #[error("invalid threshold grid: {0}")]
    InvalidGrid(String),

    #[error("image `{image}` has no map for model `{model}`")]
    MissingMap { image: String, model: String },

    #[error("the image set is empty")]
    EmptySet,

    #[error("fold {0} has no images")]
    EmptyFold(usize),

    #[error("invalid fold assignment: {0}")]
    InvalidFolds(String),

    #[error("search space of {0} cells exceeds the supported limit")]
    SearchTooLarge(u128),

    #[error("invalid synthetic corpus spec: {0}")]
    InvalidSynthSpec(String),

    #[error("invalid manifest: {0}")]
    InvalidManifest(String),

    #[error("{path}: {source}")]
    Format {
        path: PathBuf,
        #[source]
        source: FormatError,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
