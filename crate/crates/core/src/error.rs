use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad configuration value. `field` names the offending key.
    #[error("invalid configuration for `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("unknown region id {0}")]
    UnknownRegion(u32),

    #[error("unknown class `{0}`")]
    UnknownClass(String),

    #[error("feature schema mismatch: expected {expected}, got {got}")]
    SchemaMismatch { expected: String, got: String },

    #[error("degenerate bounding box on region {0}")]
    DegenerateBox(u32),

    #[error("degenerate training data: {0}")]
    DegenerateData(String),

    #[error("prediction lists disagree: {0}")]
    PredictionMismatch(String),

    #[error("exchange rejected: covariance update would lose positive definiteness")]
    ExchangeRejected,

    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn argument(message: impl Into<String>) -> Self {
        Error::Argument(message.into())
    }
}
