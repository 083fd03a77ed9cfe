//! Error type shared by every module.

use thiserror::Error;

/// All failure modes surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty corpus")]
    EmptyCorpus,

    #[error("corpus is not valid UTF-8 at byte offset {offset}")]
    InvalidUtf8 { offset: usize },

    #[error("vocabulary is empty after frequency filtering; lower min_count or raise max_vocab")]
    EmptyVocabulary,

    #[error("no co-occurrence mass")]
    NoCooccurrenceMass,

    #[error("no signal detected: every singular value fell below the USVT threshold")]
    NoSignal,

    #[error("corpus of {tokens} tokens forms fewer than 2 chunks of length {chunk_len}; use a smaller chunk length")]
    CorpusTooSmallToSplit { tokens: usize, chunk_len: usize },

    #[error("degenerate spectral gap at split {k}")]
    DegenerateGap { k: usize },

    #[error("repeated singular values: bound undefined")]
    RepeatedSingularValues,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("{0}")]
    InvalidInput(String),

    #[error("embedding file format: {0}")]
    EmbeddingFormat(String),

    #[error("numerical identity violated: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code the CLI maps this error to.
    ///
    /// 0 success, 1 internal error, 2 usage/IO, 3 degenerate data.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::EmptyCorpus
            | Error::EmptyVocabulary
            | Error::NoCooccurrenceMass
            | Error::NoSignal
            | Error::CorpusTooSmallToSplit { .. }
            | Error::DegenerateGap { .. }
            | Error::RepeatedSingularValues => 3,
            Error::InvalidUtf8 { .. }
            | Error::DimensionMismatch(_)
            | Error::InvalidInput(_)
            | Error::EmbeddingFormat(_)
            | Error::Io(_)
            | Error::Json(_) => 2,
            Error::Internal(_) => 1,
        }
    }
}
