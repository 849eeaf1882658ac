use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty vocabulary")]
    EmptyVocabulary,

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: line {line}: {message}")]
    Validation {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid corpus: {0}")]
    InvalidCorpus(String),

    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("degenerate region covariance")]
    DegenerateCovariance,

    #[error("all log-weights are -inf")]
    NoFiniteWeight,

    #[error("distributions not normalized (sums {0} and {1})")]
    NotNormalized(f64, f64),

    #[error("more regions ({regions}) than images ({images})")]
    TooManyRegions { regions: usize, images: usize },

    #[error("image {0} has no location")]
    MissingLocation(String),

    #[error("unknown image id {0}")]
    UnknownImage(String),

    #[error("empty query")]
    EmptyQuery,

    #[error("id mismatch: {0}")]
    IdMismatch(String),

    #[error("size mismatch: {0}")]
    SizeMismatch(String),

    #[error("coordinate out of range: lat={lat}, lon={lon}")]
    CoordinateOutOfRange { lat: f64, lon: f64 },

    #[error("unsupported model snapshot version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("model snapshot checksum mismatch")]
    ChecksumMismatch,

    #[error("corrupt model snapshot: {0}")]
    CorruptSnapshot(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
