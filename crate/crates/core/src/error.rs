use std::fmt;
use std::path::PathBuf;

use thiserror::Error;

/// A single violated configuration invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldError {
    pub field: &'static str,
    pub message: String,
}

impl FieldError {
    pub fn new(field: &'static str, message: impl Into<String>) -> Self {
        Self {
            field,
            message: message.into(),
        }
    }
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

/// Every invariant a config violates, not just the first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationErrors(pub Vec<FieldError>);

impl ValidationErrors {
    pub fn mentions(&self, field: &str) -> bool {
        self.0.iter().any(|e| e.field == field)
    }
}

impl fmt::Display for ValidationErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let msgs: Vec<String> = self.0.iter().map(|e| e.to_string()).collect();
        write!(f, "{}", msgs.join("; "))
    }
}

impl std::error::Error for ValidationErrors {}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config: {0}")]
    Config(#[from] ValidationErrors),

    #[error("config parse error: {0}")]
    ConfigParse(#[from] serde_json::Error),

    #[error("dataset not found: {}", .0.display())]
    DatasetNotFound(PathBuf),

    #[error("bad magic in {}: expected {expected:#010x}, found {found:#010x}", path.display())]
    BadMagic {
        path: PathBuf,
        expected: u32,
        found: u32,
    },

    #[error("truncated IDX file {}: {detail}", path.display())]
    Truncated { path: PathBuf, detail: String },

    #[error("image/label count mismatch: {images} images, {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    #[error("insufficient samples: need {needed}, have {available}")]
    InsufficientSamples { needed: usize, available: usize },

    #[error("redundancy out of range: r={redundancy} with {workers} workers")]
    RedundancyOutOfRange { redundancy: usize, workers: usize },

    #[error("cyclic assignment needs num_shards == num_workers (got {shards} shards, {workers} workers)")]
    ShardWorkerMismatch { shards: usize, workers: usize },

    #[error("sample fraction {0} outside (0, 1]")]
    SampleFraction(f64),

    #[error("worker holds no data")]
    EmptyWorkerDataset,

    #[error("empty batch")]
    EmptyBatch,

    #[error("non-finite {what}")]
    NonFinite { what: &'static str },

    #[error("non-finite {what} in round {round}")]
    NonFiniteAtRound { what: &'static str, round: usize },

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("cannot split {params} parameters into {subchannels} segments")]
    TooManySubchannels { subchannels: usize, params: usize },

    #[error("no worker scheduled")]
    NothingScheduled,

    #[error("round {round} not covered by the gamma schedule")]
    GammaOutOfRange { round: usize },

    #[error("horizon T={horizon} exceeds the exhaustive limit {limit}")]
    HorizonTooLarge { horizon: usize, limit: usize },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed metrics file: {0}")]
    Metrics(String),
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
