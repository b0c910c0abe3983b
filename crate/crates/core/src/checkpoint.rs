//! Single-file checkpoints.
//!
//! Layout: the magic `ASCLCKPT`, a `u32` format version, a `u64` header length,
//! a UTF-8 JSON header, then raw little-endian tensor data. The header holds
//! the model and training configuration, the step count, the serialized RNG
//! state, the frozen speaker encoder checksum, the training speakers and the
//! manifest paths, plus an index of `(group, name, shape, offset)` for every
//! tensor. Groups are `generator`, `discriminator`, and the Adam moments
//! `adam.{generator,discriminator}.{m,v}`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::ModelConfig;
use crate::model::Model;
use crate::optim::Adam;
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::speaker::SpeakerEncoder;
use crate::tensor::Tensor;
use crate::training::TrainConfig;

pub const MAGIC: &[u8; 8] = b"ASCLCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
struct TensorEntry {
    group: String,
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    dtype: String,
    model: ModelConfig,
    train: Option<TrainConfig>,
    step: u64,
    rng: Option<ChaCha8Rng>,
    speaker_encoder_sha256: String,
    training_speakers: Vec<String>,
    paired_manifest: Option<PathBuf>,
    untranscribed_manifest: Option<PathBuf>,
    alphabet: Option<String>,
    adam_steps: [u64; 2],
    tensors: Vec<TensorEntry>,
}

/// Everything besides parameters that a checkpoint records.
#[derive(Clone, Debug, Default)]
pub struct CheckpointMeta {
    pub train: Option<TrainConfig>,
    pub rng: Option<ChaCha8Rng>,
    pub training_speakers: Vec<String>,
    pub paired_manifest: Option<PathBuf>,
    pub untranscribed_manifest: Option<PathBuf>,
    /// Alphabet symbols in token-id order.
    pub alphabet: Option<String>,
}

#[derive(Clone, Debug)]
pub struct Optimizers<T> {
    pub generator: Adam<T>,
    pub discriminator: Adam<T>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint<T: Scalar> {
    pub model: Model<T>,
    pub meta: CheckpointMeta,
    pub optimizers: Option<Optimizers<T>>,
}

fn push_store<T: Scalar>(
    group: &str,
    store: &ParamStore<T>,
    index: &mut Vec<TensorEntry>,
    data: &mut Vec<u8>,
) {
    for (name, t) in store.iter() {
        push_tensor(group, name, t, index, data);
    }
}

fn push_tensor<T: Scalar>(group: &str, name: &str, t: &Tensor<T>, index: &mut Vec<TensorEntry>, data: &mut Vec<u8>) {
    index.push(TensorEntry {
        group: group.to_string(),
        name: name.to_string(),
        shape: t.shape().to_vec(),
        offset: data.len() as u64,
    });
    for &v in t.data() {
        v.write_le(data);
    }
}

fn push_adam<T: Scalar>(
    group: &str,
    store: &ParamStore<T>,
    adam: &Adam<T>,
    index: &mut Vec<TensorEntry>,
    data: &mut Vec<u8>,
) {
    for (i, (name, _)) in store.iter().enumerate() {
        push_tensor(&format!("{group}.m"), name, &adam.m[i], index, data);
        push_tensor(&format!("{group}.v"), name, &adam.v[i], index, data);
    }
}

pub fn save<T: Scalar>(path: &Path, model: &Model<T>, meta: &CheckpointMeta, optimizers: Option<&Optimizers<T>>) -> Result<()> {
    let mut index = Vec::new();
    let mut data = Vec::new();
    push_store("generator", &model.gen_params, &mut index, &mut data);
    push_store("discriminator", &model.disc_params, &mut index, &mut data);
    if let Some(o) = optimizers {
        push_adam("adam.generator", &model.gen_params, &o.generator, &mut index, &mut data);
        push_adam("adam.discriminator", &model.disc_params, &o.discriminator, &mut index, &mut data);
    }
    let header = Header {
        dtype: T::DTYPE.to_string(),
        model: model.config.clone(),
        train: meta.train.clone(),
        step: model.steps_trained,
        rng: meta.rng.clone(),
        speaker_encoder_sha256: model.speaker_encoder.checksum(),
        training_speakers: meta.training_speakers.clone(),
        paired_manifest: meta.paired_manifest.clone(),
        untranscribed_manifest: meta.untranscribed_manifest.clone(),
        alphabet: meta.alphabet.clone(),
        adam_steps: optimizers.map_or([0, 0], |o| [o.generator.t, o.discriminator.t]),
        tensors: index,
    };
    let header = serde_json::to_vec(&header)?;
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(MAGIC)?;
        f.write_all(&FORMAT_VERSION.to_le_bytes())?;
        f.write_all(&(header.len() as u64).to_le_bytes())?;
        f.write_all(&header)?;
        f.write_all(&data)?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn read_values<T: Scalar>(dtype: &str, bytes: &[u8]) -> Result<Vec<T>> {
    Ok(match dtype {
        "f32" => bytes.chunks_exact(4).map(|c| T::lit(f32::read_le(c) as f64)).collect(),
        "f64" => bytes.chunks_exact(8).map(|c| T::lit(f64::read_le(c))).collect(),
        other => return Err(Error::Checkpoint(format!("unknown dtype {other}"))),
    })
}

pub fn load<T: Scalar>(path: &Path) -> Result<Checkpoint<T>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let bytes = fs::read(path)?;
    let bad = |m: &str| Error::Checkpoint(format!("{}: {m}", path.display()));
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(bad(&format!("unsupported format version {version}")));
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let header_end = 20 + header_len;
    let header: Header = serde_json::from_slice(bytes.get(20..header_end).ok_or_else(|| bad("truncated header"))?)?;
    let data = &bytes[header_end..];
    let width = match header.dtype.as_str() {
        "f32" => 4,
        "f64" => 8,
        other => return Err(bad(&format!("unknown dtype {other}"))),
    };

    let mut groups: BTreeMap<&str, BTreeMap<String, Tensor<T>>> = BTreeMap::new();
    for e in &header.tensors {
        let n: usize = e.shape.iter().product();
        let start = e.offset as usize;
        let raw = data.get(start..start + n * width).ok_or_else(|| bad("truncated tensor data"))?;
        let t = Tensor::new(e.shape.clone(), read_values(&header.dtype, raw)?);
        groups.entry(e.group.as_str()).or_default().insert(e.name.clone(), t);
    }
    let empty = BTreeMap::new();
    let group = |name: &str| groups.get(name).unwrap_or(&empty);

    // Rebuild the architecture, then overwrite every tensor by name.
    let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
    let mut model = Model::<T>::new(&header.model, &mut rng)?;
    if model.speaker_encoder.checksum() != header.speaker_encoder_sha256 {
        return Err(bad("frozen speaker encoder differs from the one used for training"));
    }
    model.gen_params.load_from(group("generator")).map_err(|m| bad(&m))?;
    model.disc_params.load_from(group("discriminator")).map_err(|m| bad(&m))?;
    model.steps_trained = header.step;

    let optimizers = if groups.contains_key("adam.generator.m") {
        let restore = |prefix: &str, store: &ParamStore<T>, cfg, t| -> Result<Adam<T>> {
            let mut adam = Adam::new(cfg, store);
            adam.t = t;
            for (i, (name, p)) in store.iter().enumerate() {
                for (moment, target) in [("m", &mut adam.m[i]), ("v", &mut adam.v[i])] {
                    let src = group(&format!("{prefix}.{moment}"))
                        .get(name)
                        .ok_or_else(|| bad(&format!("missing {prefix}.{moment} for {name}")))?;
                    if src.shape() != p.shape() {
                        return Err(bad(&format!("optimizer state shape mismatch for {name}")));
                    }
                    *target = src.clone();
                }
            }
            Ok(adam)
        };
        let train = header.train.clone().unwrap_or_default();
        Some(Optimizers {
            generator: restore("adam.generator", &model.gen_params, train.adam_g(), header.adam_steps[0])?,
            discriminator: restore("adam.discriminator", &model.disc_params, train.adam_d(), header.adam_steps[1])?,
        })
    } else {
        None
    };

    Ok(Checkpoint {
        model,
        meta: CheckpointMeta {
            train: header.train,
            rng: header.rng,
            training_speakers: header.training_speakers,
            paired_manifest: header.paired_manifest,
            untranscribed_manifest: header.untranscribed_manifest,
            alphabet: header.alphabet,
        },
        optimizers,
    })
}
