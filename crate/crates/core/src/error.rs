use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("corrupt index: {0}")]
    CorruptIndex(String),

    #[error("corrupt artifact {path}: {reason}")]
    CorruptArtifact { path: String, reason: String },

    #[error("embedding provider failed on document {doc_id}: {source}")]
    Embedding {
        doc_id: String,
        #[source]
        source: ProviderError,
    },

    #[error("not found: {0}")]
    NotFound(String),

    #[error("internal consistency: {0}")]
    Consistency(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Failure reported by a pluggable model provider (embedder, extractor,
/// classifier, generator).
#[derive(Debug, Clone, Error, PartialEq)]
pub enum ProviderError {
    #[error("provider unavailable: {0}")]
    Unavailable(String),

    #[error("malformed provider response: {0}")]
    BadResponse(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}
