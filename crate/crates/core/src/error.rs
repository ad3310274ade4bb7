use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("rating {rating} outside the rating set [{min}, {max}] (line {line})")]
    RatingOutOfRange {
        line: usize,
        rating: f64,
        min: i32,
        max: i32,
    },

    #[error("no interactions left after {min_core}-core filtering")]
    EmptyAfterFiltering { min_core: usize },

    #[error("invalid split: {0}")]
    InvalidSplit(String),

    #[error("insufficient data for whitening: need at least {needed} vectors, got {got}")]
    InsufficientWhiteningData { needed: usize, got: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("embedding file has {got} rows but the corpus has {expected} edges")]
    RowCountMismatch { expected: usize, got: usize },

    #[error("non-finite value in imported embedding row for edge {edge_id}")]
    NonFiniteEmbedding { edge_id: usize },

    #[error("bad file format in {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("checksum mismatch: manifest says {expected}, canonical file hashes to {actual}")]
    ChecksumMismatch { expected: String, actual: String },

    #[error("edge {edge_id} references node out of range ({message})")]
    NodeOutOfRange { edge_id: usize, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("rating {0} has no registered parameters")]
    UnknownRating(i32),

    #[error("non-finite gradient in tensor {0}")]
    NonFiniteGradient(String),

    #[error("training diverged at epoch {epoch}: validation MSE {valid_mse} exceeds 10x the initial {initial_mse}")]
    Diverged {
        epoch: usize,
        valid_mse: f64,
        initial_mse: f64,
    },

    #[error("empty evaluation set")]
    EmptyEvaluation,

    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) trait IoContext<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|source| Error::Io {
            path: path.into(),
            source,
        })
    }
}
