//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value violated its constraint. The message carries
    /// the offending key path.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A NaN or infinity appeared where the math requires finite values.
    /// Non-finite intermediates abort the operation instead of propagating.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// Rejection sampling for the pair-distance bound exhausted its draw
    /// budget; the scenario is effectively infeasible.
    #[error("infeasible scenario: {0}")]
    InfeasibleScenario(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    /// Exhaustive grid search is only affordable for very small networks.
    #[error("grid search limited to 3 links, got {0}")]
    GridTooLarge(usize),

    #[error("report contains no max_power baseline")]
    MissingBaseline,

    /// A verification suite exceeded its error threshold.
    #[error("check failed: {0}")]
    CheckFailed(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
