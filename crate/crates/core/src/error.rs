use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("id {id} out of range for vocabulary of size {vocab}")]
    OutOfVocab { id: usize, vocab: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("attention row {row} has every key masked")]
    AllMaskedRow { row: usize },

    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("backward already ran on this graph")]
    GraphConsumed,

    #[error("non-finite value in {tensor}")]
    NonFinite { tensor: String },

    #[error("invalid input data: {0}")]
    Data(String),

    #[error("malformed {what}: {reason}")]
    Format { what: &'static str, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("check failed: {0}")]
    Check(String),
}

impl Error {
    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Shape {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short stable tag used by the CLI's one-line error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::OutOfVocab { .. } => "out_of_vocab",
            Error::Config(_) => "config",
            Error::Usage(_) => "usage",
            Error::AllMaskedRow { .. } => "all_masked",
            Error::NonScalarLoss(_) => "non_scalar_loss",
            Error::GraphConsumed => "graph_consumed",
            Error::NonFinite { .. } => "non_finite",
            Error::Data(_) => "data",
            Error::Format { .. } => "format",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
            Error::Check(_) => "check",
        }
    }
}
