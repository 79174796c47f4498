//! Rank-expansion analysis, channel-configuration search and cost accounting
//! for lightweight inverted-bottleneck networks.
//!
//! Numeric kernels are generic over [`Real`] (`f32` or `f64`); the aliases
//! below pin the precision used by the analysis pipelines.

pub mod archspec;
pub mod cli;
pub mod costmodel;
pub mod numerics;
pub mod randnet;
pub mod scalar;
pub mod search;
pub mod seed;

pub use scalar::Real;

/// Double-precision matrix used throughout the rank study.
pub type Matrix = numerics::DenseMatrix<f64>;
/// Single-precision matrix.
pub type Matrix32 = numerics::DenseMatrix<f32>;
