//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: malformed record: {reason}")]
    MalformedRecord {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("{path}:{line}: duplicate document id `{doc_id}`")]
    DuplicateDocId {
        path: PathBuf,
        line: usize,
        doc_id: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("embedder model mismatch: expected `{expected}`, got `{actual}`")]
    ModelMismatch { expected: String, actual: String },

    #[error("missing index file: {0}")]
    MissingIndexFile(PathBuf),

    #[error("checksum mismatch for {file}: manifest has {expected}, file hashes to {actual}")]
    ChecksumMismatch {
        file: String,
        expected: String,
        actual: String,
    },

    #[error("unsupported index format version {found} (this build reads version {expected})")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("index data corrupt: {0}")]
    CorruptIndex(String),

    #[error("request to {url} failed{}: {reason}", status.map(|s| format!(" (HTTP {s})")).unwrap_or_default())]
    Http {
        url: String,
        status: Option<u16>,
        reason: String,
        retryable: bool,
    },

    #[error("judge output not parseable as YES/NO after {attempts} attempts (last output: {last:?})")]
    JudgeUnparseable { attempts: u32, last: String },

    #[error("pairwise judging aborted after {completed}/{requested} repeats: {reason}")]
    PairwiseAborted {
        completed: usize,
        requested: usize,
        reason: String,
        partial: Box<crate::eval::WinRateReport>,
    },

    #[error("internal invariant violated: {0}")]
    Internal(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 2 for I/O and data errors, 64 for
    /// usage/config errors, 70 for internal failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. }
            | Error::MalformedRecord { .. }
            | Error::DuplicateDocId { .. }
            | Error::MissingIndexFile(_)
            | Error::ChecksumMismatch { .. }
            | Error::VersionMismatch { .. }
            | Error::CorruptIndex(_)
            | Error::Http { .. } => 2,
            Error::InvalidArgument(_) | Error::Config(_) | Error::ModelMismatch { .. } => 64,
            Error::DimensionMismatch { .. }
            | Error::JudgeUnparseable { .. }
            | Error::PairwiseAborted { .. }
            | Error::Internal(_) => 70,
        }
    }
}
