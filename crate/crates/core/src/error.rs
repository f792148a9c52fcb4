use thiserror::Error;

#[derive(Debug, Error)]
pub enum EtherError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("shape error: expected {expected}, got {actual}")]
    Shape { expected: String, actual: String },
    #[error("no path from the agent to a goal object")]
    NoPath,
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("checkpoint integrity error: {0}")]
    Integrity(String),
    #[error("checkpoint for step {requested} not found (available: {available:?})")]
    MissingCheckpoint { requested: u64, available: Vec<u64> },
    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<EtherError>,
    },
    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl EtherError {
    pub fn shape(expected: impl Into<String>, actual: impl std::fmt::Debug) -> Self {
        EtherError::Shape {
            expected: expected.into(),
            actual: format!("{actual:?}"),
        }
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        EtherError::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, EtherError>;
