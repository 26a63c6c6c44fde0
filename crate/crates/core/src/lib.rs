//! Structural pruning of small networks through a dependency graph over
//! component halves, parameter grouping, group-level sparse training and
//! physical channel removal.

pub mod cli;
pub mod data;
pub mod depgraph;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod gen;
pub mod grouping;
pub mod importance;
pub mod ir;
pub mod pruner;
pub mod report;
pub mod scalar;
pub mod sparse;
pub mod tensor;
pub mod zoo;

pub use error::{Error, Result};
pub use ir::{Component, ComponentKind, HalfId, NetworkBuilder, NetworkIR, Side};
pub use scalar::Scalar;
pub use tensor::Tensor;

/// Single-precision network, the on-disk and CLI default.
pub type Network = NetworkIR<f32>;
/// Double-precision network, used for gradient checks.
pub type Network64 = NetworkIR<f64>;
pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
