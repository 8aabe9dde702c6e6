//! Feature-attribution explainers for small feed-forward classifiers,
//! quantitative criteria to score them, and aggregation schemes that combine
//! several explanations into one with lower sensitivity or lower complexity.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases at
//! the crate root fix the scalar to `f64`, which is what the CLI and the
//! documented tolerances use.

pub mod aggregate;
pub mod ava;
pub mod data;
pub mod error;
pub mod explain;
mod linalg;
pub mod metrics;
pub mod model;
pub mod report;
pub mod rng;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Model64 = model::Model<f64>;
pub type Model32 = model::Model<f32>;
pub type Dataset64 = data::Dataset<f64>;
pub type Dataset32 = data::Dataset<f32>;
pub type AttributionVector64 = explain::AttributionVector<f64>;
pub type ExplainerConfig64 = explain::ExplainerConfig<f64>;
