//! Crate error type. Validation errors carry the offending field or entry
//! name so the CLI can surface a single-line, machine-parsable message.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("catalog: no models")]
    EmptyCatalog,

    #[error("catalog: model {model}: missing field {field}")]
    MissingField { model: String, field: String },

    #[error("catalog: model {model}: {message}")]
    InvalidProfile { model: String, message: String },

    #[error("catalog: duplicate model name {0}")]
    DuplicateModel(String),

    #[error("unknown model {0}")]
    UnknownModel(String),

    #[error("arrivals: {0}")]
    InvalidArrivalProcess(String),

    #[error("queue {queue}: request for model {request}")]
    ModelMismatch { queue: String, request: String },

    #[error("empty batch")]
    EmptyBatch,

    #[error("concurrency must be >= 1")]
    ZeroConcurrency,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("empty minibatch")]
    EmptyMinibatch,

    #[error("utility: non-positive input {0}")]
    NonPositiveInput(&'static str),

    #[error("empty record list")]
    EmptyRecords,

    #[error("empty holdout")]
    EmptyHoldout,

    #[error("population size must be even and >= 4, got {0}")]
    InvalidPopulation(usize),

    #[error("config: field={field} {message}")]
    Config { field: String, message: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse: {0}")]
    Toml(#[from] toml::de::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Shorthand for config validation failures.
    pub fn config(field: &str, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.to_string(),
            message: message.into(),
        }
    }
}
