//! Cine cardiac MRI degradation simulation and deblurring networks.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the precision for the common cases.

pub mod error;
pub mod scalar;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub mod gradcheck;
pub mod image;
pub mod kspace;
pub mod data;
pub mod losses;
pub mod nn;
pub mod model_recurrent;
pub mod model_cascade;
pub mod checkpoint;
pub mod train;
pub mod metrics;

pub type Tensor32 = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
pub type Graph32 = tensor::Graph<f32>;
pub type Graph64 = tensor::Graph<f64>;
pub type Image32 = image::Image<f32>;
pub type Image64 = image::Image<f64>;
pub type Cine32 = image::CineSequence<f32>;
pub type Cine64 = image::CineSequence<f64>;
pub type KSpace32 = kspace::KSpace<f32>;
pub type KSpace64 = kspace::KSpace<f64>;
pub type Generator32 = model_recurrent::Generator<f32>;
pub type Discriminator32 = model_recurrent::Discriminator<f32>;
pub type Cascade32 = model_cascade::Cascade<f32>;
pub type GanTrainer32 = train::GanTrainer<f32>;
pub type CascadeTrainer32 = train::CascadeTrainer<f32>;
pub type Model32 = train::Model<f32>;
