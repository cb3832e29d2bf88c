use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty attention support")]
    EmptyAttentionSupport,

    #[error("empty history")]
    EmptyHistory,

    #[error("empty candidate list")]
    EmptyCandidates,

    #[error("no negatives: impression has no non-clicked candidate")]
    NoNegatives,

    #[error("loss node must be scalar, found shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("objective is not deterministic: two evaluations gave {0} and {1}")]
    NonDeterministic(f64, f64),

    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("duplicate news id `{0}`")]
    DuplicateNewsId(String),

    #[error("candidate token `{0}` lacks a -0/-1 label suffix")]
    BadCandidateToken(String),

    #[error("unrecognized embedding file")]
    UnrecognizedEmbeddingFile,

    #[error("unsupported file version {0}")]
    UnsupportedVersion(u32),

    #[error("truncated file: {0}")]
    Truncated(String),

    #[error("embedding dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("embedding file has no blank-image vector entry")]
    MissingBlank,

    #[error("news ids missing from embedding store: {0:?}")]
    MissingNews(Vec<String>),

    #[error("unknown id `{0}`")]
    UnknownId(String),

    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("cannot read {}", path.display())]
    File { path: PathBuf, source: std::io::Error },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Reads a whole file, keeping the path in the error.
pub(crate) fn read_file(path: &std::path::Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|source| Error::File { path: path.to_path_buf(), source })
}

pub(crate) fn read_text(path: &std::path::Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::File { path: path.to_path_buf(), source })
}

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Shape(msg.into()))
}
