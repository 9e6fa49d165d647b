use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// The environment specification is structurally unusable.
    #[error("invalid environment specification: {0}")]
    InvalidSpec(String),

    #[error("index {index} out of range for path of length {len}")]
    Index { index: usize, len: usize },

    /// The request exceeds the configured memory budget.
    #[error("resource limit: {0}")]
    Resource(String),

    #[error("coupling ledger incomplete at site {site}: {detail}")]
    IncompleteLedger { site: i64, detail: String },

    #[error("not a right excursion: {0}")]
    NotAnExcursion(String),

    #[error("insufficient replicas: need at least {needed}, got {got}")]
    InsufficientReplicas { needed: usize, got: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
