use thiserror::Error;

use crate::time::Time;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    #[error("invalid cost model: {0}")]
    InvalidCostModel(String),
    #[error("invalid arrival profile: {0}")]
    InvalidProfile(String),
    #[error("invalid query {query}: {reason}")]
    InvalidQuery { query: String, reason: String },
    #[error("invalid scheduler config: {0}")]
    InvalidConfig(String),
    #[error("need at least {needed} distinct sample x-values, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("requested {requested} tuples but the stream only carries {total}")]
    TooManyTuples { requested: u64, total: u64 },
    #[error("query {query}: no schedule meets the deadline")]
    Infeasible { query: String },
    #[error("instance too large for exhaustive search: {0}")]
    TooLarge(String),
    #[error("unsupported model for constraint scheduling: {0}")]
    UnsupportedModel(String),
    #[error("query {query}: a single tuple costs more than C_max")]
    CmaxTooSmall { query: String },
    #[error("invalid plan for query {query}: {violations}")]
    InvalidPlan { query: String, violations: String },
    #[error("events out of order at {0}")]
    UnorderedEvents(Time),
    #[error("duplicate query id {0}")]
    DuplicateQuery(String),
    #[error("malformed number {0:?}")]
    BadNumber(String),
}
