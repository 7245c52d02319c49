use thiserror::Error;

/// Errors raised by the model, the tracer and the estimators.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("the root has no parent")]
    RootHasNoParent,

    #[error("child index {index} out of range for branching degree {d}")]
    ChildIndexOutOfRange { index: u32, d: u32 },

    #[error("edge count overflows for d = {d}, n = {n}")]
    EdgeCountOverflow { d: u32, n: u32 },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("link time {time} collides with an existing link on edge {edge}")]
    TimeCollision { edge: String, time: f64 },

    #[error("trace exceeded its budget of {max_jumps} jumps (seed {seed:#018x})")]
    BudgetExhausted { max_jumps: u64, seed: u64 },

    #[error("vertex {0} is outside the configuration")]
    UnknownVertex(String),

    #[error("edge {edge} has no link with index {index}")]
    NoSuchLink { edge: String, index: usize },

    #[error("parse error on line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
