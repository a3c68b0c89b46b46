//! Zero-bias convolutional networks for facial expression recognition.
//!
//! The crate covers the whole pipeline without an ML framework:
//!
//! * [`tensor`] and [`rng`]: dense `(n, c, h, w)` tensors and the seeded
//!   random source every stochastic step draws from.
//! * [`layers`] and [`model`]: forward/backward kernels and the layer stack
//!   (three bias-free 5×5 convolutions, max and quadrant pooling, a
//!   300-unit hidden layer, dropout, softmax).
//! * [`train`]: initialization, SGD with momentum and weight decay, the epoch
//!   loop, evaluation, cross-validation and the weight file format.
//! * [`data`]: manifest ingestion, standardization, augmentation, fold
//!   construction and a synthetic face generator with known action units.
//! * [`introspect`]: top-N mining, deconvnet and guided-backprop
//!   reconstructions, and image grids.
//! * [`fau`]: activation histograms conditioned on action units and their
//!   KL divergences.
//! * [`gradcheck`]: finite-difference verification of every layer.

pub mod data;
pub mod error;
pub mod fau;
pub mod gradcheck;
pub mod introspect;
pub mod layers;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use model::{LayerSpec, ModelParams, ModelSpec};
pub use rng::Rng;
pub use tensor::{Fill, Scalar, Tensor};
