use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("node index {index} out of range for graph with {len} nodes")]
    NodeOutOfRange { index: usize, len: usize },

    #[error("permutation of size {got} applied to graph with {expected} nodes")]
    PermutationSize { expected: usize, got: usize },

    #[error("mapping is not a bijection: {0}")]
    NotBijective(String),

    #[error("graph is empty")]
    Empty,

    #[error("graph has no edges")]
    NoEdges,

    #[error("graph is disconnected")]
    Disconnected,

    #[error("graph needs at least {needed} nodes, found {found}")]
    TooFewNodes { needed: usize, found: usize },

    #[error("eigensolver did not converge in {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("checkpoint holds a {found} model, expected {expected}")]
    KindMismatch { expected: String, found: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
