//! Surrogate-pattern uncertainty estimation for image classifiers.
//!
//! A classifier is trained to emit, besides its class scores, an image that
//! should match a fixed binary pattern of the predicted class. The distance
//! between the emitted image and that pattern is the uncertainty score.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod grad;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod objective;
pub mod patterns;
pub mod perturb;
pub mod scoring;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use model::{build_model, Arch, Prediction, SurrogateModel};
pub use patterns::{Pattern, PatternKind, PatternSet};
pub use tensor::Tensor;
