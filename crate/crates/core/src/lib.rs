//! A miniature VITS-style zero-shot text-to-speech model trained with
//! adversarial speaker-consistency learning (ASCL).
//!
//! Each training episode pairs a transcribed support utterance with an
//! untranscribed query utterance from a different speaker. The support latent
//! is pushed through the speaker-conditioned flow into the query speaker's
//! voice, and a speaker-consistency discriminator judges the result against
//! the query speaker's embedding. Stop-gradients keep that adversarial signal
//! out of the posterior encoder, text encoder and duration predictor.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`) and runs on a
//! small reverse-mode tape in [`autodiff`]. Speaker embeddings come from a
//! frozen encoder behind the [`speaker::SpeakerEncoder`] trait.

pub mod ascl;
pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod generator;
pub mod model;
pub mod nn;
pub mod optim;
pub mod params;
pub mod scalar;
pub mod speaker;
pub mod spectral;
pub mod synthetic;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Single-precision model, the default for training and inference.
pub type Model32 = model::Model<f32>;
/// Double-precision model, used for gradient checks.
pub type Model64 = model::Model<f64>;
pub type Trainer32 = training::Trainer<f32>;
pub type Trainer64 = training::Trainer<f64>;
pub type Tensor32 = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
