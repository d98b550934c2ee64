//! Graph neural networks with a node-independent, degree-aware residual gate.
//!
//! The crate is organised bottom-up:
//!
//! - [`graph`]: CSR graphs, symmetric normalisation with self-loops, sparse products.
//! - [`dataset`]: the `NDGG1` binary container and dataset validation.
//! - [`tensor`] and [`autodiff`]: dense matrices and a small reverse-mode tape.
//! - [`model`]: GCN, SGC, the gated residual model and its ungated ablation.
//! - [`train`]: Adam with step-wise exponential learning-rate decay.
//! - [`analysis`]: smoothing diagnostics (MDCN, second eigenvalue, depth bounds,
//!   convergence to the degree-determined limit, degree-bucket accuracy).

pub mod analysis;
pub mod autodiff;
pub mod dataset;
pub mod error;
pub mod graph;
pub mod model;
pub mod rng;
pub mod synthetic;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use graph::{Graph, SparseMatrix};
pub use tensor::Tensor;
