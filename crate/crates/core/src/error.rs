use thiserror::Error;

use crate::dataset::ContainerError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("graph must contain at least one node")]
    EmptyGraph,

    #[error("node id {id} out of range for a graph with {n} nodes")]
    NodeOutOfRange { id: usize, n: usize },

    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },

    #[error("mask selects no nodes")]
    EmptyMask,

    #[error("loss must be a 1x1 node, got {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },

    #[error("power iteration did not converge within {0} iterations")]
    IterationCap(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error(transparent)]
    Container(#[from] ContainerError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
