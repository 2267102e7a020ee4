use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("graph has no nodes")]
    EmptyGraph,

    #[error("node {0} is out of range")]
    NodeOutOfRange(usize),

    #[error("node {0} is not alive")]
    DeadNode(usize),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: [usize; 2],
        rhs: [usize; 2],
    },

    #[error("no alive nodes to act on")]
    NoAliveNodes,

    #[error("replay buffer holds {have} transitions, batch needs {need}")]
    BufferTooSmall { have: usize, need: usize },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("cannot remove {k} nodes from a graph with {n} alive nodes")]
    BudgetTooLarge { k: usize, n: usize },

    #[error("non-finite parameter {name} after update {update}")]
    NonFinite { name: String, update: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
