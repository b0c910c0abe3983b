//! Frozen speaker encoder.
//!
//! The built-in [`StandInEncoder`] is a small convolutional network over the
//! log-mel spectrogram with mean pooling over time, whose weights ship in
//! `assets/speaker_encoder_v1.bin` and are never updated. Anything that maps a
//! mel spectrogram to a 512-vector can be used instead through [`FnEncoder`].
//!
//! Blob layout (little endian): magic `ASCLSPK\0`, `u32` version, `u32` tensor
//! count, then per tensor `u32` name length, UTF-8 name, `u32` rank, `u32`
//! dims, `f32` values.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{check_frames, RawSpeakerEmbedding, MIN_FRAMES, RAW_DIM};
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::uniform_init;
use crate::params::{ParamId, ParamStore, StoreKind};
use crate::scalar::Scalar;
use crate::spectral::N_MELS;
use crate::tensor::{Conv1dSpec, Tensor};

pub const BLOB_MAGIC: &[u8; 8] = b"ASCLSPK\0";
pub const BLOB_VERSION: u32 = 1;
pub const BLOB_SEED: u64 = 0x5EC5_0001;
pub const BLOB_SHA256: &str = include_str!("../../assets/speaker_encoder_v1.sha256");
static BLOB: &[u8] = include_bytes!("../../assets/speaker_encoder_v1.bin");

const HIDDEN: usize = 128;
/// Log-mel input is centred on its own mean level and scaled by this constant,
/// so the embedding ignores overall loudness.
const MEL_SCALE: f64 = 0.25;
/// Frames whose mean log-mel sits this far below the loudest frame count as
/// silence and are left out of the embedding.
const SILENCE_MARGIN: f64 = 6.0;

/// Drops silent frames, keeping everything if fewer than `MIN_FRAMES` would remain.
fn voiced_frames<T: Scalar>(mel: &Tensor<T>) -> Tensor<T> {
    let (bins, frames) = (mel.shape()[0], mel.shape()[1]);
    let energy: Vec<f64> = (0..frames)
        .map(|j| (0..bins).map(|b| mel.row(b)[j].as_f64()).sum::<f64>() / bins as f64)
        .collect();
    let loudest = energy.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let keep: Vec<usize> = (0..frames).filter(|&j| energy[j] >= loudest - SILENCE_MARGIN).collect();
    if keep.len() == frames || keep.len() < MIN_FRAMES {
        return mel.clone();
    }
    Tensor::from_fn(&[bins, keep.len()], |i| mel.row(i / keep.len())[keep[i % keep.len()]])
}

/// Maps a log-mel spectrogram `[80, T]` to a raw 512-dim speaker embedding.
pub trait SpeakerEncoder<T: Scalar>: Send + Sync {
    fn embed(&self, mel: &Tensor<T>) -> Result<RawSpeakerEmbedding<T>>;

    /// Identifier of the weights, used to assert they never change.
    fn checksum(&self) -> String;
}

/// Adapter for an external encoder given as a function.
pub struct FnEncoder<F> {
    f: F,
    id: String,
}

impl<F> FnEncoder<F> {
    pub fn new(id: impl Into<String>, f: F) -> Self {
        FnEncoder { f, id: id.into() }
    }
}

impl<T: Scalar, F> SpeakerEncoder<T> for FnEncoder<F>
where
    F: Fn(&Tensor<T>) -> Vec<T> + Send + Sync,
{
    fn embed(&self, mel: &Tensor<T>) -> Result<RawSpeakerEmbedding<T>> {
        check_frames(mel)?;
        let v = (self.f)(mel);
        RawSpeakerEmbedding::new(Tensor::new(vec![v.len()], v))
    }

    fn checksum(&self) -> String {
        self.id.clone()
    }
}

#[derive(Clone, Debug)]
pub struct StandInEncoder<T> {
    store: ParamStore<T>,
    conv1: (ParamId, ParamId),
    conv2: (ParamId, ParamId),
    out: ParamId,
}

impl<T: Scalar> StandInEncoder<T> {
    /// The encoder shipped with the crate.
    pub fn shipped() -> Self {
        Self::from_blob(BLOB).expect("shipped speaker encoder blob is valid")
    }

    /// Deterministically regenerate the weights from a seed.
    pub fn generate(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = vec![
            ("conv1.weight".to_string(), uniform_init::<f32, _>(&mut rng, &[HIDDEN, N_MELS, 3], N_MELS * 3, 2.0)),
            ("conv1.bias".to_string(), Tensor::zeros(&[HIDDEN])),
            ("conv2.weight".to_string(), uniform_init(&mut rng, &[HIDDEN, HIDDEN, 3], HIDDEN * 3, 2.0)),
            ("conv2.bias".to_string(), Tensor::zeros(&[HIDDEN])),
            ("out.weight".to_string(), uniform_init(&mut rng, &[RAW_DIM, HIDDEN], HIDDEN, 1.0)),
        ];
        Self::from_tensors(tensors).expect("generated tensors have the expected layout")
    }

    fn from_tensors(tensors: Vec<(String, Tensor<f32>)>) -> Result<Self> {
        let mut store = ParamStore::new(StoreKind::Frozen);
        for (name, t) in tensors {
            store.insert(name, t.cast::<T>());
        }
        let get = |name: &str, shape: &[usize]| -> Result<ParamId> {
            let id = store
                .id(name)
                .ok_or_else(|| Error::Checkpoint(format!("speaker encoder blob lacks {name}")))?;
            if store.get(id).shape() != shape {
                return Err(Error::Checkpoint(format!("speaker encoder tensor {name} has the wrong shape")));
            }
            Ok(id)
        };
        Ok(StandInEncoder {
            conv1: (get("conv1.weight", &[HIDDEN, N_MELS, 3])?, get("conv1.bias", &[HIDDEN])?),
            conv2: (get("conv2.weight", &[HIDDEN, HIDDEN, 3])?, get("conv2.bias", &[HIDDEN])?),
            out: get("out.weight", &[RAW_DIM, HIDDEN])?,
            store,
        })
    }

    pub fn from_blob(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(format!("speaker encoder blob: {m}"));
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            let s = bytes.get(pos..pos + n).ok_or_else(|| bad("truncated"))?;
            pos += n;
            Ok(s)
        };
        if take(8)? != BLOB_MAGIC {
            return Err(bad("bad magic"));
        }
        let u32_at = |s: &[u8]| u32::from_le_bytes(s.try_into().expect("4 bytes"));
        if u32_at(take(4)?) != BLOB_VERSION {
            return Err(bad("unsupported version"));
        }
        let count = u32_at(take(4)?) as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = u32_at(take(4)?) as usize;
            let name = String::from_utf8(take(name_len)?.to_vec()).map_err(|_| bad("name not utf-8"))?;
            let rank = u32_at(take(4)?) as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(u32_at(take(4)?) as usize);
            }
            let n: usize = shape.iter().product();
            let data = take(4 * n)?.chunks_exact(4).map(f32::read_le).collect();
            tensors.push((name, Tensor::new(shape, data)));
        }
        Self::from_tensors(tensors)
    }

    pub fn to_blob(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(BLOB_MAGIC);
        out.extend_from_slice(&BLOB_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.store.len() as u32).to_le_bytes());
        for (name, t) in self.store.iter() {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in t.data() {
                (v.as_f64() as f32).write_le(&mut out);
            }
        }
        out
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.store
    }

    /// Forward pass on a graph. Weights enter as constants, so no gradient
    /// ever reaches them.
    pub fn forward<'g>(&self, g: &'g Graph<T>, mel: Var<'g, T>) -> Var<'g, T> {
        let w = |id| g.param(&self.store, id);
        let level = mel.value().sum() / T::lit(mel.value().len() as f64);
        let x = mel.add_scalar(-level).scale(T::lit(MEL_SCALE));
        let h = x.conv1d(w(self.conv1.0), Some(w(self.conv1.1)), Conv1dSpec::same(3, 1)).tanh();
        let h = h.conv1d(w(self.conv2.0), Some(w(self.conv2.1)), Conv1dSpec::same(3, 2)).tanh();
        w(self.out).matmul(h.mean_cols())
    }
}

impl<T: Scalar> SpeakerEncoder<T> for StandInEncoder<T> {
    fn embed(&self, mel: &Tensor<T>) -> Result<RawSpeakerEmbedding<T>> {
        check_frames(mel)?;
        let g = Graph::new();
        let out = self.forward(&g, g.constant(voiced_frames(mel)));
        RawSpeakerEmbedding::new((*out.value()).clone())
    }

    fn checksum(&self) -> String {
        self.store.checksum()
    }
}

/// SHA-256 of the shipped blob bytes.
pub fn shipped_blob_sha256() -> String {
    hex::encode(Sha256::digest(BLOB))
}
