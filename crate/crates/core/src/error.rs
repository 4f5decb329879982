use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on an argument was violated (bad probability, shape mismatch, ...).
    #[error("contract violation: {0}")]
    Contract(String),
    /// A fault spec, test-kit request or sweep is not well formed.
    #[error("specification error: {0}")]
    Specification(String),
    #[error("ingestion error: {0}")]
    Ingestion(String),
    #[error("training failure: {0}")]
    Training(String),
    #[error("calibration error: {0}")]
    Calibration(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed json in {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn spec(msg: impl Into<String>) -> Self {
        Error::Specification(msg.into())
    }
}
