//! Twin-system explanation engine.
//!
//! A feed-forward network (the black box) is paired with a feature-weighted
//! k-nearest-neighbour case base built over the same training data (the
//! white box). Feature weights extracted from the network parameterise the
//! case retrieval, so each prediction can be explained by the training
//! cases the network treats as most similar.
//!
//! The numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the element type for the common cases.

pub mod cli;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod explanation;
pub mod network;
pub mod retrieval;
pub mod scalar;
pub mod util;
pub mod weighting;

pub use error::{Result, TwinError};
pub use scalar::Scalar;

pub type DatasetF64 = dataset::Dataset<f64>;
pub type DatasetF32 = dataset::Dataset<f32>;
pub type CaseF64 = dataset::Case<f64>;
pub type NetworkF64 = network::NetworkModel<f64>;
pub type NetworkF32 = network::NetworkModel<f32>;
