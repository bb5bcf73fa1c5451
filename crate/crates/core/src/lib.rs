//! Metric learning for attributed graphs with sliced optimal transport.
//!
//! Graphs are embedded as discrete distributions through a simple graph
//! convolution `Y = ReLU((A + I)^r X Theta)`, compared with coordinate-projected
//! Wasserstein distances, and the single trainable matrix `Theta` is fitted with
//! a class-cloud softmax loss so that k-NN on the learned distances improves.
//!
//! The numeric core is generic over the scalar type (`f32` or `f64`) via the
//! [`Real`] trait; concrete `f64` aliases are exported at the crate root.

pub mod bench;
pub mod error;
pub mod eval;
pub mod graph;
pub mod ot;
pub mod scalar;
pub mod sgcn;
pub mod train;

pub use error::Error;
pub use scalar::Real;

pub type Result<T> = std::result::Result<T, Error>;

// Concrete f64 aliases for the main domain types.
pub type Graph64 = graph::Graph<f64>;
pub type GraphDataset64 = graph::GraphDataset<f64>;
pub type Distribution64 = ot::DiscreteDistribution<f64>;
pub type TransportPlan64 = ot::TransportPlan<f64>;
pub type SgcnParams64 = sgcn::SgcnParams<f64>;
pub type DistanceMatrix64 = eval::DistanceMatrix<f64>;
