use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("graph must have at least one node")]
    EmptyGraph,
    #[error("node {node} out of range for graph with {node_count} nodes")]
    NodeOutOfRange { node: usize, node_count: usize },
    #[error("self-loop event ({0}, {0}): self-loops are permanent")]
    SelfLoopEvent(usize),
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(usize, usize),
    #[error("missing edge ({0}, {1})")]
    MissingEdge(usize, usize),
    #[error("invalid event at index {index}: {source}")]
    InvalidEvent {
        index: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: expected {expected_rows}x{expected_cols}, got {rows}x{cols}")]
    ShapeMismatch {
        expected_rows: usize,
        expected_cols: usize,
        rows: usize,
        cols: usize,
    },
    #[error("non-finite value in column {column} at node {node}")]
    NonFinite { column: usize, node: usize },
    #[error("propagation state is poisoned by an earlier non-finite value")]
    Poisoned,
    #[error("oracle infeasible: {node_count} nodes exceeds the dense limit of {limit}")]
    OracleInfeasible { node_count: usize, limit: usize },
    #[error("singular system in dense solve")]
    Singular,
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("bad matrix file: {0}")]
    MatrixFormat(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("infeasible generator configuration: {0}")]
    Infeasible(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
