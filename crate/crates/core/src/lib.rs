//! Image difference captioning at desk scale.
//!
//! A joint-encoding captioner (the reference and modified images are stacked
//! into one input) built on a small tape-based autodiff engine, together with a
//! procedural dataset generator, exact caption metrics, and training studies.

pub mod dataset;
pub mod error;
pub mod imaging;
pub mod metrics;
pub mod model;
pub mod scalar;
pub mod tensor;
pub mod training;

pub use error::{IdcError, Result};
pub use scalar::Scalar;

pub type Tensor64 = tensor::Tensor<f64>;
pub type Tape64 = tensor::Tape<f64>;
pub type Model64 = model::IdcModel<f64>;
pub type Tensor32 = tensor::Tensor<f32>;
pub type Tape32 = tensor::Tape<f32>;
pub type Model32 = model::IdcModel<f32>;
