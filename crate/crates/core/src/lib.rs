//! Lifelong representation learning with multi-task ERM as a subroutine.
//!
//! The numerical core is generic over [`Scalar`] (`f32` or `f64`); the
//! `*64` aliases below fix the precision used by the experiment harness.

// `!(x > 0)` is how validation rejects NaN along with non-positive values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod datagen;
pub mod dense;
pub mod eluder;
pub mod erm;
pub mod error;
pub mod lifelong;
pub mod linalg;
pub mod model;
pub mod risk;
pub mod scalar;

pub use dense::Mat;
pub use error::{Error, Result};
pub use model::{Dataset, LossKind, PredictionHead, Predictor, SemiOrthogonalMatrix};
pub use scalar::Scalar;

/// Crate version, recorded in experiment manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub type Mat64 = Mat<f64>;
pub type Dataset64 = Dataset<f64>;
pub type Predictor64 = Predictor<f64>;
pub type PredictionHead64 = PredictionHead<f64>;
pub type SemiOrthogonal64 = SemiOrthogonalMatrix<f64>;
pub type TaskStream64 = datagen::TaskStream<f64>;
pub type OptimizerConfig64 = erm::OptimizerConfig<f64>;
