use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("shape mismatch in {context}: {left:?} vs {right:?}")]
    ShapeMismatch {
        context: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("relation graph contains a cycle through node ids {0:?}")]
    Cycle(Vec<usize>),

    #[error("graph error: {0}")]
    Graph(String),

    #[error("node {0} has no attributes and no attributed descendants")]
    MissingAttributes(usize),

    #[error("node {0} has an empty negative context pool")]
    EmptyNegativePool(usize),

    #[error("node {0} has an empty positive context pool")]
    EmptyPositivePool(usize),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("manifest missing in {0}")]
    ManifestMissing(PathBuf),

    #[error("malformed {file}: {message}")]
    Malformed { file: &'static str, message: String },

    #[error("{file} truncated: expected {expected} bytes, found {found}")]
    Truncated {
        file: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("manifest mismatch: {field} declares {declared}, data has {actual}")]
    ManifestMismatch {
        field: &'static str,
        declared: usize,
        actual: usize,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("non-finite loss at epoch {epoch}, step {step}: {terms}")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        terms: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
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
