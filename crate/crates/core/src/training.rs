//! Episodic adversarial training loop.
//!
//! One step draws a batch of (support, query) episodes, runs the generator
//! forward on each, updates the discriminator on detached fakes, then updates
//! the generator on the weighted sum of reconstruction, KL, duration and
//! adversarial losses scored by the freshly updated discriminator.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ascl::{discriminator_loss, generator_loss, stop_gradient, DEFAULT_ALPHA};
use crate::autodiff::{Gradients, Graph, Var};
use crate::checkpoint::{self, CheckpointMeta, Optimizers};
use crate::data::{assert_disjoint_speakers, draw_indices, Alphabet, CorpusManifest, LoadedCorpus, SpectralFeatures};
use crate::error::{Error, Result};
use crate::generator::losses::{duration_loss, kl_loss, log_mel, recon_loss};
use crate::generator::{mas_align, normal_noise, ModelConfig, PosteriorEncoder};
use crate::model::Model;
use crate::optim::{Adam, AdamConfig};
use crate::params::StoreKind;
use crate::scalar::Scalar;
use crate::speaker::RawSpeakerEmbedding;
use crate::spectral::{self, HOP};
use crate::tensor::Tensor;

pub const METRICS_HEADER: &str = "step,d_loss,g_ascl,recon,kl,duration,wall_ms";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub steps: u64,
    pub batch_size: usize,
    pub lr_g: f64,
    pub lr_d: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    /// Multiplicative learning-rate decay applied once per pass over the paired corpus.
    pub lr_decay: f64,
    pub alpha: f64,
    pub seed: u64,
    pub checkpoint_every: u64,
    /// Decoder training window in spectrogram frames.
    pub segment_frames: usize,
    /// Record real step durations in the metrics; off gives byte-reproducible CSVs.
    pub wall_clock: bool,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            steps: 2000,
            batch_size: 1,
            lr_g: 2e-4,
            lr_d: 2e-4,
            betas: (0.8, 0.99),
            eps: 1e-9,
            lr_decay: 0.999,
            alpha: DEFAULT_ALPHA,
            seed: 0,
            checkpoint_every: 500,
            segment_frames: 16,
            wall_clock: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub recon: f64,
    pub kl: f64,
    pub duration: f64,
    pub ascl: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            recon: 45.0,
            kl: 1.0,
            duration: 1.0,
            ascl: 1.0,
        }
    }
}

/// Full run configuration; on disk a TOML file with `[model]`, `[train]` and
/// `[loss]` tables, every key optional.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub train: TrainSettings,
    pub loss: LossWeights,
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let t = &self.train;
        let bad = |m: &str| Err(Error::Config(m.into()));
        if t.batch_size == 0 || t.checkpoint_every == 0 || t.segment_frames == 0 {
            return bad("batch_size, checkpoint_every and segment_frames must be positive");
        }
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !(positive(t.lr_g) && positive(t.lr_d) && positive(t.eps)) {
            return bad("learning rates and eps must be positive");
        }
        let unit = |v: f64| v.is_finite() && (0.0..1.0).contains(&v);
        if !(unit(t.betas.0) && unit(t.betas.1)) {
            return bad("betas must lie in [0, 1)");
        }
        if !(t.lr_decay.is_finite() && t.lr_decay > 0.0 && t.lr_decay <= 1.0) {
            return bad("lr_decay must lie in (0, 1]");
        }
        if !(t.alpha.is_finite() && t.alpha > 0.0 && t.alpha <= 1.0) {
            return bad("alpha must lie in (0, 1]");
        }
        let w = &self.loss;
        if [w.recon, w.kl, w.duration, w.ascl].iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return bad("loss weights must be non-negative");
        }
        Ok(())
    }

    pub fn adam_g(&self) -> AdamConfig {
        self.adam(self.train.lr_g)
    }

    pub fn adam_d(&self) -> AdamConfig {
        self.adam(self.train.lr_d)
    }

    fn adam(&self, lr: f64) -> AdamConfig {
        AdamConfig {
            lr,
            beta1: self.train.betas.0,
            beta2: self.train.betas.1,
            eps: self.train.eps,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub d_loss: f64,
    pub g_ascl: f64,
    pub recon: f64,
    pub kl: f64,
    pub duration: f64,
    pub wall_ms: f64,
}

impl StepRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.step, self.d_loss, self.g_ascl, self.recon, self.kl, self.duration, self.wall_ms
        )
    }

    fn is_finite(&self) -> bool {
        [self.d_loss, self.g_ascl, self.recon, self.kl, self.duration]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// A transcribed utterance with everything that does not change during training.
#[derive(Clone, Debug)]
pub struct SupportItem<T> {
    pub speaker: String,
    pub wave: Vec<T>,
    pub features: SpectralFeatures<T>,
    pub tokens: Vec<u32>,
    pub embedding: RawSpeakerEmbedding<T>,
}

#[derive(Clone, Debug)]
pub struct QueryItem<T> {
    pub speaker: String,
    pub wave: Vec<T>,
    pub embedding: RawSpeakerEmbedding<T>,
}

/// Both corpora decoded, featurized and embedded once up front. Raw speaker
/// embeddings come from the frozen encoder, so caching them is exact.
#[derive(Clone, Debug)]
pub struct TrainingData<T> {
    pub support: Vec<SupportItem<T>>,
    pub query: Vec<QueryItem<T>>,
}

impl<T: Scalar> TrainingData<T> {
    pub fn new(model: &Model<T>, paired: &LoadedCorpus, untranscribed: &LoadedCorpus) -> Result<Self> {
        assert_disjoint_speakers(&paired.manifest, &untranscribed.manifest)?;
        if paired.is_empty() || untranscribed.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let cast = |w: &[f32]| w.iter().map(|&v| T::lit(v as f64)).collect::<Vec<T>>();
        let mut support = Vec::with_capacity(paired.len());
        for i in 0..paired.len() {
            let wave = cast(&paired.waves[i]);
            let features = SpectralFeatures::extract(&wave)?;
            let tokens = paired.tokens[i].clone().ok_or(Error::Schema {
                line: i + 1,
                message: "paired entry has no text".into(),
            })?;
            if tokens.is_empty() {
                return Err(Error::EmptyText);
            }
            if features.frames() < tokens.len() {
                return Err(Error::TooFewFrames {
                    frames: features.frames(),
                    tokens: tokens.len(),
                });
            }
            let embedding = model.raw_embedding(&features.mel)?;
            support.push(SupportItem {
                speaker: paired.speaker(i).to_string(),
                wave,
                features,
                tokens,
                embedding,
            });
        }
        let mut query = Vec::with_capacity(untranscribed.len());
        for i in 0..untranscribed.len() {
            let wave = cast(&untranscribed.waves[i]);
            let features = SpectralFeatures::extract(&wave)?;
            query.push(QueryItem {
                speaker: untranscribed.speaker(i).to_string(),
                embedding: model.raw_embedding(&features.mel)?,
                wave,
            });
        }
        Ok(TrainingData { support, query })
    }

    pub fn speakers(&self) -> Vec<String> {
        let mut s: Vec<String> = self
            .support
            .iter()
            .map(|x| x.speaker.clone())
            .chain(self.query.iter().map(|x| x.speaker.clone()))
            .collect();
        s.sort();
        s.dedup();
        s
    }
}

/// One episode plus every random draw its step needs, so that a step is a pure
/// function of the trainer state and the batch.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode<T> {
    pub support: usize,
    pub query: usize,
    /// First frame of the decoder window.
    pub segment_start: usize,
    /// First sample of the real query window.
    pub query_offset: usize,
    /// Posterior noise, `[latent, frames]`.
    pub noise: Tensor<T>,
}

/// Unweighted generator loss terms and their weighted sum.
pub struct GeneratorLosses<'g, T: Scalar> {
    pub ascl: Var<'g, T>,
    pub recon: Var<'g, T>,
    pub kl: Var<'g, T>,
    pub duration: Var<'g, T>,
    pub total: Var<'g, T>,
}

/// Generator-side forward pass of one episode.
struct Forward<'g, T: Scalar> {
    g_s: Var<'g, T>,
    g_q: Var<'g, T>,
    fake_s: Var<'g, T>,
    fake_q: Var<'g, T>,
    real_s: Tensor<T>,
    real_q: Tensor<T>,
    recon: Var<'g, T>,
    kl: Var<'g, T>,
    duration: Var<'g, T>,
}

fn window<T: Scalar>(wave: &[T], start: usize, len: usize) -> Tensor<T> {
    Tensor::from_fn(&[1, len], |i| wave.get(start + i).copied().unwrap_or(T::zero()))
}

pub struct Trainer<T: Scalar> {
    pub config: TrainConfig,
    pub model: Model<T>,
    pub optimizers: Optimizers<T>,
    pub rng: ChaCha8Rng,
    pub data: TrainingData<T>,
}

impl<T: Scalar> Trainer<T> {
    /// Fresh model; the config seed drives initialization and every later draw.
    pub fn new(config: TrainConfig, data_source: (&LoadedCorpus, &LoadedCorpus)) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.train.seed);
        let mut model = Model::new(&config.model, &mut rng)?;
        let data = TrainingData::new(&model, data_source.0, data_source.1)?;
        let raws: Vec<_> = data
            .support
            .iter()
            .map(|s| &s.embedding)
            .chain(data.query.iter().map(|q| &q.embedding))
            .collect();
        model.generator.projection.standardize(&mut model.gen_params, &raws);
        Ok(Self::assemble(config, model, None, rng, data))
    }

    pub fn resume(checkpoint: checkpoint::Checkpoint<T>, data: TrainingData<T>) -> Result<Self> {
        let config = checkpoint
            .meta
            .train
            .ok_or_else(|| Error::Checkpoint("checkpoint has no training configuration".into()))?;
        let rng = checkpoint
            .meta
            .rng
            .ok_or_else(|| Error::Checkpoint("checkpoint has no rng state".into()))?;
        Ok(Self::assemble(config, checkpoint.model, checkpoint.optimizers, rng, data))
    }

    fn assemble(
        config: TrainConfig,
        model: Model<T>,
        optimizers: Option<Optimizers<T>>,
        rng: ChaCha8Rng,
        data: TrainingData<T>,
    ) -> Self {
        let optimizers = optimizers.unwrap_or_else(|| Optimizers {
            generator: Adam::new(config.adam_g(), &model.gen_params),
            discriminator: Adam::new(config.adam_d(), &model.disc_params),
        });
        Trainer {
            config,
            model,
            optimizers,
            rng,
            data,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.model.steps_trained
    }

    /// Learning-rate multiplier for the next step.
    pub fn lr_scale(&self) -> f64 {
        let per_epoch = self.data.support.len().div_ceil(self.config.train.batch_size) as u64;
        let epoch = self.model.steps_trained / per_epoch.max(1);
        self.config.train.lr_decay.powi(epoch.min(i32::MAX as u64) as i32)
    }

    pub fn sample_batch(&mut self) -> Result<Vec<Episode<T>>> {
        let seg = self.config.train.segment_frames;
        let latent = self.config.model.latent_channels;
        (0..self.config.train.batch_size)
            .map(|_| {
                let (s, q) = draw_indices(&mut self.rng, self.data.support.len(), self.data.query.len())?;
                let frames = self.data.support[s].features.frames();
                let segment_start = self.rng.random_range(0..=frames.saturating_sub(seg));
                let q_len = self.data.query[q].wave.len();
                let query_offset = self.rng.random_range(0..=q_len.saturating_sub(seg * HOP));
                let noise = normal_noise(&mut self.rng, &[latent, frames]);
                Ok(Episode {
                    support: s,
                    query: q,
                    segment_start,
                    query_offset,
                    noise,
                })
            })
            .collect()
    }

    fn forward<'g>(&self, g: &'g Graph<T>, ep: &Episode<T>) -> Result<Forward<'g, T>> {
        let m = &self.model;
        let gen = &m.generator;
        let store = &m.gen_params;
        let sup = &self.data.support[ep.support];
        let qry = &self.data.query[ep.query];

        let g_s = m.speaker(g, &sup.embedding);
        let g_q = m.speaker(g, &qry.embedding);
        let g_d = gen.reference.forward(g, store, g.constant(sup.features.mel.clone()));

        let post = gen.posterior.stats(g, store, &sup.features.linear);
        let z_v = PosteriorEncoder::sample(&post, &ep.noise);
        let (hidden, prior) = gen.text.forward(g, store, &sup.tokens);
        let (z_f, logdet) = gen.flow.forward(g, store, z_v, g_s)?;

        let alignment = mas_align(&prior.mean.value(), &prior.log_std.value(), &z_f.value())?;
        let kl = kl_loss(z_f, logdet, &prior.expand(&alignment), post.log_std, &ep.noise)?;
        let log_d = gen.duration.forward(g, store, hidden, g_s, g_d);
        let duration = duration_loss(log_d, &alignment.durations())?;

        // Decoder window.
        let frames = sup.features.frames();
        let seg = self.config.train.segment_frames.min(frames);
        let (a, b) = (ep.segment_start, ep.segment_start + seg);
        let z_v_seg = z_v.slice_cols(a, b);
        let real_s = window(&sup.wave, a * HOP, seg * HOP);
        let target = spectral::log_mel(&m.filterbank, &spectral::stft_magnitude(real_s.data()));
        let y_s = m.decode(g, z_v_seg);
        let recon = recon_loss(log_mel(y_s, &m.filterbank), &target)?;

        // Adversarial fakes never reach the posterior, text encoder or duration predictor.
        let fake_s = m.decode(g, stop_gradient(z_v_seg));
        let z_q = gen.flow.inverse(g, store, stop_gradient(z_f).slice_cols(a, b), g_q)?;
        let fake_q = m.decode(g, z_q);
        let real_q = window(&qry.wave, ep.query_offset, seg * HOP);

        Ok(Forward {
            g_s,
            g_q,
            fake_s,
            fake_q,
            real_s,
            real_q,
            recon,
            kl,
            duration,
        })
    }

    /// Discriminator loss and gradients on detached fakes and embeddings.
    fn discriminator_gradients(&self, fwd: &Forward<'_, T>) -> Result<(f64, Gradients<T>)> {
        let m = &self.model;
        let d = &m.discriminator;
        let store = &m.disc_params;
        let g = Graph::freezing(StoreKind::Generator);
        let c = |v: &Var<'_, T>| g.constant((*v.value()).clone());
        let (g_s, g_q) = (c(&fwd.g_s), c(&fwd.g_q));
        let real_q = d.forward(&g, store, g.constant(fwd.real_q.clone()), g_q)?;
        let real_s = d.forward(&g, store, g.constant(fwd.real_s.clone()), g_s)?;
        let fake_q = d.forward(&g, store, c(&fwd.fake_q), g_q)?;
        let fake_s = d.forward(&g, store, c(&fwd.fake_s), g_s)?;
        let loss = discriminator_loss(real_q, real_s, fake_q, fake_s, T::lit(self.config.train.alpha));
        Ok((loss.item().as_f64(), g.backward(loss)))
    }

    /// Generator objective for one episode against the current discriminator.
    /// Use a graph that freezes the discriminator store.
    pub fn generator_losses<'g>(&self, g: &'g Graph<T>, ep: &Episode<T>) -> Result<GeneratorLosses<'g, T>> {
        let fwd = self.forward(g, ep)?;
        self.weigh(&fwd)
    }

    fn weigh<'g>(&self, fwd: &Forward<'g, T>) -> Result<GeneratorLosses<'g, T>> {
        let m = &self.model;
        let w = &self.config.loss;
        // The embeddings are the discriminator's condition, not something
        // the generator may move to fool it.
        let fake_q = m.discriminator.forward(fwd.fake_q.graph(), &m.disc_params, fwd.fake_q, fwd.g_q.detach())?;
        let fake_s = m.discriminator.forward(fwd.fake_s.graph(), &m.disc_params, fwd.fake_s, fwd.g_s.detach())?;
        let ascl = generator_loss(fake_q, fake_s, T::lit(self.config.train.alpha));
        let total = fwd
            .recon
            .scale(T::lit(w.recon))
            .add(fwd.kl.scale(T::lit(w.kl)))
            .add(fwd.duration.scale(T::lit(w.duration)))
            .add(ascl.scale(T::lit(w.ascl)));
        Ok(GeneratorLosses {
            ascl,
            recon: fwd.recon,
            kl: fwd.kl,
            duration: fwd.duration,
            total,
        })
    }

    /// Runs one full update on `batch` and returns its record (`wall_ms` unset).
    pub fn train_step(&mut self, batch: &[Episode<T>]) -> Result<StepRecord> {
        if batch.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let step = self.model.steps_trained + 1;
        let inv_b = T::lit(1.0 / batch.len() as f64);
        let graphs: Vec<Graph<T>> = batch.iter().map(|_| Graph::freezing(StoreKind::Discriminator)).collect();
        let fwds = graphs
            .iter()
            .zip(batch)
            .map(|(g, ep)| self.forward(g, ep))
            .collect::<Result<Vec<_>>>()?;

        let mut d_grads = Gradients::default();
        let mut d_loss = 0.0;
        for fwd in &fwds {
            let (l, grads) = self.discriminator_gradients(fwd)?;
            d_loss += l / batch.len() as f64;
            d_grads.accumulate(grads, inv_b);
        }
        let nonfinite = |what: &str| Error::NonFiniteLoss {
            step,
            detail: what.to_string(),
        };
        if !d_loss.is_finite() || !d_grads.all_finite() {
            return Err(nonfinite(&format!("discriminator loss {d_loss}")));
        }
        let lr = self.lr_scale();
        self.optimizers
            .discriminator
            .step(&mut self.model.disc_params, &d_grads, self.config.train.lr_d * lr);

        let mut g_grads = Gradients::default();
        let mut record = StepRecord {
            step,
            d_loss,
            g_ascl: 0.0,
            recon: 0.0,
            kl: 0.0,
            duration: 0.0,
            wall_ms: 0.0,
        };
        for (g, fwd) in graphs.iter().zip(&fwds) {
            let losses = self.weigh(fwd)?;
            let n = batch.len() as f64;
            record.g_ascl += losses.ascl.item().as_f64() / n;
            record.recon += losses.recon.item().as_f64() / n;
            record.kl += losses.kl.item().as_f64() / n;
            record.duration += losses.duration.item().as_f64() / n;
            if !losses.total.item().is_finite() {
                return Err(nonfinite(&format!("{record:?}")));
            }
            g_grads.accumulate(g.backward(losses.total), inv_b);
        }
        if !record.is_finite() || !g_grads.all_finite() {
            return Err(nonfinite(&format!("generator gradients: {record:?}")));
        }
        self.optimizers
            .generator
            .step(&mut self.model.gen_params, &g_grads, self.config.train.lr_g * lr);
        self.model.steps_trained = step;
        Ok(record)
    }

    /// Sample a batch, update, and time the step if configured.
    pub fn step(&mut self) -> Result<StepRecord> {
        let start = Instant::now();
        let batch = self.sample_batch()?;
        let mut record = self.train_step(&batch)?;
        if self.config.train.wall_clock {
            record.wall_ms = start.elapsed().as_secs_f64() * 1e3;
        }
        Ok(record)
    }

    pub fn meta(&self, paired: Option<&Path>, untranscribed: Option<&Path>) -> CheckpointMeta {
        CheckpointMeta {
            train: Some(self.config.clone()),
            rng: Some(self.rng.clone()),
            training_speakers: self.data.speakers(),
            paired_manifest: paired.map(Path::to_path_buf),
            untranscribed_manifest: untranscribed.map(Path::to_path_buf),
            alphabet: None,
        }
    }
}

/// Where and how [`run_training`] writes its artifacts.
pub struct RunOptions<'a> {
    pub out_dir: PathBuf,
    /// Continue from this checkpoint instead of initializing from the seed.
    pub resume: Option<PathBuf>,
    /// Manifest paths recorded in checkpoints.
    pub paired_path: Option<PathBuf>,
    pub untranscribed_path: Option<PathBuf>,
    pub on_step: Option<&'a mut dyn FnMut(&StepRecord)>,
}

impl RunOptions<'_> {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        RunOptions {
            out_dir: out_dir.into(),
            resume: None,
            paired_path: None,
            untranscribed_path: None,
            on_step: None,
        }
    }
}

pub fn checkpoint_path(out_dir: &Path, step: u64) -> PathBuf {
    out_dir.join("checkpoints").join(format!("step_{step:08}.ckpt"))
}

pub fn metrics_path(out_dir: &Path) -> PathBuf {
    out_dir.join("metrics.csv")
}

/// Keep the header and the rows up to and including `step`.
fn truncate_metrics(path: &Path, step: u64) -> Result<String> {
    let text = if path.exists() { fs::read_to_string(path)? } else { String::new() };
    let mut out = format!("{METRICS_HEADER}\n");
    for line in text.lines().skip(1) {
        match line.split(',').next().and_then(|s| s.parse::<u64>().ok()) {
            Some(s) if s <= step => {
                out.push_str(line);
                out.push('\n');
            }
            _ => {}
        }
    }
    Ok(out)
}

/// Train for `config.train.steps` total steps, writing `metrics.csv` and
/// checkpoints under `options.out_dir`. Returns the path of the final checkpoint.
pub fn run_training<T: Scalar>(
    config: &TrainConfig,
    alphabet: &Alphabet,
    paired: &CorpusManifest,
    untranscribed: &CorpusManifest,
    mut options: RunOptions<'_>,
) -> Result<PathBuf> {
    config.validate()?;
    assert_disjoint_speakers(paired, untranscribed)?;
    if paired.is_empty() || untranscribed.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if alphabet.vocab_size() > config.model.vocab_size {
        return Err(Error::Config(format!(
            "alphabet needs {} token ids but the model vocabulary has {}",
            alphabet.vocab_size(),
            config.model.vocab_size
        )));
    }
    let paired = LoadedCorpus::load(paired.clone(), alphabet)?;
    let untranscribed = LoadedCorpus::load(untranscribed.clone(), alphabet)?;

    let mut trainer = match &options.resume {
        Some(path) => {
            let ck = checkpoint::load::<T>(path)?;
            let data = TrainingData::new(&ck.model, &paired, &untranscribed)?;
            let mut t = Trainer::resume(ck, data)?;
            // The step budget may be extended on resume; everything else is fixed.
            t.config.train.steps = config.train.steps;
            t
        }
        None => Trainer::new(config.clone(), (&paired, &untranscribed))?,
    };

    fs::create_dir_all(options.out_dir.join("checkpoints"))?;
    let metrics = metrics_path(&options.out_dir);
    fs::write(&metrics, truncate_metrics(&metrics, trainer.step_count())?)?;
    let mut csv = fs::OpenOptions::new().append(true).open(&metrics)?;

    let save = |t: &Trainer<T>, opts: &RunOptions<'_>| -> Result<PathBuf> {
        let path = checkpoint_path(&opts.out_dir, t.step_count());
        let mut meta = t.meta(opts.paired_path.as_deref(), opts.untranscribed_path.as_deref());
        meta.alphabet = Some(alphabet.symbols().iter().collect());
        checkpoint::save(&path, &t.model, &meta, Some(&t.optimizers))?;
        Ok(path)
    };

    let mut last = save(&trainer, &options)?;
    while trainer.step_count() < trainer.config.train.steps {
        let record = match trainer.step() {
            Ok(r) => r,
            Err(e @ Error::NonFiniteLoss { .. }) => {
                let dump = options.out_dir.join(format!("nonfinite_step_{}.txt", trainer.step_count() + 1));
                fs::write(&dump, format!("{e}\nlast good checkpoint: {}\n", last.display()))?;
                return Err(e);
            }
            Err(e) => return Err(e),
        };
        writeln!(csv, "{}", record.csv_row())?;
        if let Some(cb) = options.on_step.as_mut() {
            cb(&record);
        }
        let step = trainer.step_count();
        if step % trainer.config.train.checkpoint_every == 0 || step == trainer.config.train.steps {
            csv.flush()?;
            last = save(&trainer, &options)?;
        }
    }
    Ok(last)
}
