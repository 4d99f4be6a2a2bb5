use thiserror::Error;

use crate::adapter::CompletionResult;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// How a caller should react to a failure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Transient; the same request may succeed later.
    Retryable,
    /// The request itself is wrong or cannot be served.
    Permanent,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("transport error from provider {provider}: {message}")]
    Transport { provider: String, message: String },

    #[error("prompt of {tokens} tokens exceeds the {window}-token context window of {model}")]
    ContextOverflow {
        model: String,
        tokens: u64,
        window: u64,
    },

    #[error("model not in catalog: {0}")]
    CatalogMiss(String),

    #[error("catalog: {0}")]
    Catalog(String),

    #[error("bad request: {0}")]
    BadRequest(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("storage: {0}")]
    Storage(String),

    #[error("unparsable judge output: {0:?}")]
    JudgeFormat(String),

    #[error("embedder: {0}")]
    Embedder(String),

    #[error("context filter: {0}")]
    Filter(String),

    #[error("request queue for user {0} is full")]
    QueueFull(String),

    #[error("fixture: {0}")]
    Fixture(String),

    #[error("config: {0}")]
    Config(String),

    /// The expensive model failed after the verifier escalated; the cheap
    /// candidate is attached so callers can serve it as a degraded answer.
    #[error("escalation to {model} failed: {source}")]
    Escalation {
        model: String,
        #[source]
        source: Box<Error>,
        fallback: Box<CompletionResult>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Transport { .. } | Error::QueueFull(_) | Error::Storage(_) | Error::Io(_) => {
                ErrorClass::Retryable
            }
            Error::Escalation { source, .. } => source.class(),
            _ => ErrorClass::Permanent,
        }
    }

    pub fn is_retryable(&self) -> bool {
        self.class() == ErrorClass::Retryable
    }

    /// Stable machine-readable kind, used on the wire and across the C ABI.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Transport { .. } => "transport",
            Error::ContextOverflow { .. } => "context_overflow",
            Error::CatalogMiss(_) => "catalog_miss",
            Error::Catalog(_) => "catalog",
            Error::BadRequest(_) => "bad_request",
            Error::NotFound(_) => "not_found",
            Error::Precondition(_) => "precondition",
            Error::Storage(_) => "storage",
            Error::JudgeFormat(_) => "judge_format",
            Error::Embedder(_) => "embedder",
            Error::Filter(_) => "filter",
            Error::QueueFull(_) => "queue_full",
            Error::Fixture(_) => "fixture",
            Error::Config(_) => "config",
            Error::Escalation { .. } => "escalation",
            Error::Io(_) => "io",
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Storage(format!("serialization: {e}"))
    }
}
