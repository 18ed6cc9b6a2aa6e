//! Variational recurrent autoencoder for polyphonic symbolic music.
//!
//! Notes are `(dT, T, P)` events with exact rational timing. The model and
//! its training loop are generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the precision for the common cases.

pub mod analysis;
pub mod baselines;
pub mod container;
pub mod dataset;
pub mod error;
pub mod model;
pub mod nn;
pub mod notes;
pub mod scalar;

pub use error::{Error, ErrorKind, Result};
pub use scalar::{DType, Scalar};

pub type Tensor32 = nn::Tensor<f32>;
pub type Tensor64 = nn::Tensor<f64>;
pub type MusicVae32 = model::MusicVae<f32>;
pub type MusicVae64 = model::MusicVae<f64>;
pub type Trainer32 = model::Trainer<f32>;
pub type Trainer64 = model::Trainer<f64>;
pub type Checkpoint32 = model::Checkpoint<f32>;
pub type Checkpoint64 = model::Checkpoint<f64>;
