//! Compact CNN training and transfer learning for small image datasets.
//!
//! The crate implements a three-stage convolutional classifier (VoltaVision)
//! with hand-written forward and backward passes, a bit-exact checkpoint
//! format with classification-head surgery, SGD training with a step
//! learning-rate schedule, dataset loaders for image folders and CIFAR
//! binaries, and stratified k-fold cross-validation.

pub mod data;
pub mod error;
pub mod eval;
pub mod layers;
pub mod model;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use model::{build_voltavision, ArchitectureConfig, ModelGraph, TrainablePolicy};
pub use tensor::{Scalar, Shape4, Tensor};
