//! Speaker embeddings: the frozen encoder (`mel -> 512`), the trainable
//! projection head (`512 -> 256`), and the trainable reference encoder that
//! conditions the duration predictor.

pub mod frozen;
pub mod projection;
pub mod reference;

pub use frozen::{FnEncoder, SpeakerEncoder, StandInEncoder};
pub use projection::SpeakerProjection;
pub use reference::ReferenceEncoder;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const RAW_DIM: usize = 512;
pub const SPEAKER_DIM: usize = 256;
pub const REFERENCE_DIM: usize = 256;
/// Minimum mel frames accepted by the speaker and reference encoders.
pub const MIN_FRAMES: usize = 4;

fn checked<T: Scalar>(v: Tensor<T>, dim: usize, what: &str) -> Result<Tensor<T>> {
    if v.len() != dim {
        return Err(Error::ShapeMismatch(format!("{what} must have {dim} entries, got {}", v.len())));
    }
    if !v.all_finite() {
        return Err(Error::ShapeMismatch(format!("{what} has non-finite entries")));
    }
    Ok(v.reshape(&[dim, 1]))
}

/// Output of the frozen speaker encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct RawSpeakerEmbedding<T>(Tensor<T>);

impl<T: Scalar> RawSpeakerEmbedding<T> {
    pub fn new(v: Tensor<T>) -> Result<Self> {
        checked(v, RAW_DIM, "raw speaker embedding").map(Self)
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.0
    }
}

/// Projected speaker embedding `g`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpeakerEmbedding<T>(Tensor<T>);

impl<T: Scalar> SpeakerEmbedding<T> {
    pub fn new(v: Tensor<T>) -> Result<Self> {
        checked(v, SPEAKER_DIM, "speaker embedding").map(Self)
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.0
    }
}

/// Utterance-level reference embedding `g_d`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceEmbedding<T>(Tensor<T>);

impl<T: Scalar> ReferenceEmbedding<T> {
    pub fn new(v: Tensor<T>) -> Result<Self> {
        checked(v, REFERENCE_DIM, "reference embedding").map(Self)
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.0
    }
}

pub(crate) fn check_frames<T: Scalar>(mel: &Tensor<T>) -> Result<usize> {
    if mel.shape().len() != 2 || mel.shape()[0] != crate::spectral::N_MELS {
        return Err(Error::ShapeMismatch(format!("mel must be [80, T], got {:?}", mel.shape())));
    }
    let frames = mel.shape()[1];
    if frames < MIN_FRAMES {
        return Err(Error::TooShort {
            got: frames,
            min: MIN_FRAMES,
            unit: "frames",
        });
    }
    Ok(frames)
}

/// Cosine similarity of two equal-length vectors.
pub fn cosine_similarity<T: Scalar>(a: &[T], b: &[T]) -> T {
    assert_eq!(a.len(), b.len());
    let dot: T = a.iter().zip(b).map(|(&x, &y)| x * y).sum();
    let na: T = a.iter().map(|&x| x * x).sum::<T>().sqrt();
    let nb: T = b.iter().map(|&x| x * x).sum::<T>().sqrt();
    if na == T::zero() || nb == T::zero() {
        return T::zero();
    }
    (dot / (na * nb)).max(-T::one()).min(T::one())
}
