//! Crate-wide error type.

/// Errors surfaced by the pipeline.
///
/// Verification never errors: a response that cannot be checked earns reward
/// 0.0 with a failure reason, which is data rather than a fault.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    /// The generation backend gave up after exhausting its retry budget.
    /// Any partially completed curation results were flushed before this
    /// was raised.
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),

    /// A record or dataset failed validation on load.
    #[error("invalid data: {0}")]
    InvalidData(String),

    /// An operation received input that an upstream stage was required to
    /// rule out (e.g. an unfiltered record reaching stratification).
    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("config error: {0}")]
    Config(String),

    /// A bin was requested from a stratified dataset that has no members in it.
    #[error("empty difficulty bin: {0}")]
    EmptyBin(String),
}

pub type Result<T> = std::result::Result<T, Error>;
