use thiserror::Error;

use crate::dodag::NodeId;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("event queue still busy after {0} events")]
    Nonquiescent(usize),
    #[error("node {0} has no path to the root")]
    UnreachableNode(NodeId),
    #[error("node {0} is not adjacent to {1}")]
    UnknownNeighbor(NodeId, NodeId),
    #[error("node {0} did not answer")]
    NoResponse(NodeId),
    #[error("malformed filter element: {0} bits is not a multiple of {1}")]
    MalformedElement(usize, usize),
    #[error("closed-form size overflows for k={0}, h={1}")]
    Overflow(u64, u32),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
