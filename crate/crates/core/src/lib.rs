//! Spatio-temporal 3D residual networks for video action recognition:
//! tensors, hand-written layers with backward passes, 18/34-layer networks,
//! the clip augmentation pipeline, SGD training with checkpoints, and
//! sliding-window video inference.
//!
//! Numeric code is generic over [`Scalar`] (`f32` for training and
//! inference, `f64` for gradient checking); the aliases below name the two
//! instantiations.

pub mod data;
pub mod error;
pub mod gradcheck;
pub mod inference;
pub mod layers;
pub mod resnet;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use resnet::{ArchSpec, Network};
pub use rng::Rng;
pub use scalar::{DType, Scalar};
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Network32 = Network<f32>;
pub type Network64 = Network<f64>;
pub type TrainState32 = train::TrainState<f32>;
pub type TrainState64 = train::TrainState<f64>;
