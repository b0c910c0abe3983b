//! Miniature VITS generator: posterior and text encoders, speaker-conditioned
//! affine-coupling flow, upsampling decoder, duration predictor, monotonic
//! alignment search and the ELBO terms.

pub mod decoder;
pub mod duration;
pub mod flow;
pub mod losses;
pub mod mas;
pub mod posterior;
pub mod text;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use decoder::Decoder;
pub use duration::DurationPredictor;
pub use flow::Flow;
pub use mas::{mas_align, Alignment};
pub use posterior::PosteriorEncoder;
pub use text::TextEncoder;

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::speaker::{ReferenceEncoder, SpeakerProjection};
use crate::spectral::HOP;

pub const LOG_STD_MIN: f64 = -7.0;
pub const LOG_STD_MAX: f64 = 5.0;

/// Architecture hyperparameters. Defaults are desk-scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Number of token ids including the unknown-symbol id 0.
    pub vocab_size: usize,
    pub latent_channels: usize,
    pub hidden_channels: usize,
    pub posterior_layers: usize,
    pub text_layers: usize,
    pub flow_layers: usize,
    pub flow_hidden: usize,
    pub decoder_channels: usize,
    pub upsample_rates: Vec<usize>,
    pub duration_hidden: usize,
    pub noise_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: 9,
            latent_channels: 16,
            hidden_channels: 64,
            posterior_layers: 4,
            text_layers: 2,
            flow_layers: 4,
            flow_hidden: 32,
            decoder_channels: 64,
            upsample_rates: vec![4, 4, 4, 4],
            duration_hidden: 64,
            noise_scale: 0.667,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_channels % 2 == 1 {
            return Err(Error::OddChannels(self.latent_channels));
        }
        let positive = [
            self.vocab_size,
            self.latent_channels,
            self.hidden_channels,
            self.flow_hidden,
            self.decoder_channels,
            self.duration_hidden,
        ];
        if positive.contains(&0) {
            return Err(Error::Config("model sizes must be positive".into()));
        }
        let total: usize = self.upsample_rates.iter().product();
        if total != HOP || self.upsample_rates.contains(&0) {
            return Err(Error::Config(format!(
                "upsample rates {:?} must multiply to the hop size {HOP}",
                self.upsample_rates
            )));
        }
        if !(self.noise_scale.is_finite() && self.noise_scale >= 0.0) {
            return Err(Error::Config("noise_scale must be a non-negative number".into()));
        }
        Ok(())
    }
}

/// Mean and log standard deviation of a diagonal Gaussian, `[D, N]` each.
#[derive(Clone, Copy)]
pub struct GaussianStats<'g, T: Scalar> {
    pub mean: Var<'g, T>,
    pub log_std: Var<'g, T>,
}

impl<'g, T: Scalar> GaussianStats<'g, T> {
    /// Split `[2D, N]` into mean and clamped log-std.
    pub(crate) fn from_projection(stats: Var<'g, T>, d: usize) -> Self {
        GaussianStats {
            mean: stats.slice_rows(0, d),
            log_std: stats
                .slice_rows(d, 2 * d)
                .clamp(T::lit(LOG_STD_MIN), T::lit(LOG_STD_MAX)),
        }
    }

    /// Repeat token columns along an alignment.
    pub fn expand(&self, alignment: &Alignment) -> Self {
        GaussianStats {
            mean: self.mean.gather_cols(alignment.tokens()),
            log_std: self.log_std.gather_cols(alignment.tokens()),
        }
    }
}

/// Every trainable generator-side module. Parameters live in one
/// [`ParamStore`] under the prefixes `posterior`, `text`, `flow`, `decoder`,
/// `duration`, `speaker_proj` and `ref_encoder`.
#[derive(Clone, Debug)]
pub struct Generator {
    pub config: ModelConfig,
    pub posterior: PosteriorEncoder,
    pub text: TextEncoder,
    pub flow: Flow,
    pub decoder: Decoder,
    pub duration: DurationPredictor,
    pub projection: SpeakerProjection,
    pub reference: ReferenceEncoder,
}

impl Generator {
    pub fn new<T: Scalar, R: Rng + ?Sized>(config: &ModelConfig, store: &mut ParamStore<T>, rng: &mut R) -> Result<Self> {
        config.validate()?;
        Ok(Generator {
            posterior: PosteriorEncoder::new(store, config, rng),
            text: TextEncoder::new(store, config, rng),
            flow: Flow::new(store, config, rng)?,
            decoder: Decoder::new(store, config, rng),
            duration: DurationPredictor::new(store, config, rng),
            projection: SpeakerProjection::new(store, rng),
            reference: ReferenceEncoder::new(store, rng),
            config: config.clone(),
        })
    }

    /// Module prefixes that the adversarial loss must never reach.
    pub const GATED_MODULES: [&'static str; 3] = ["posterior", "text", "duration"];
}

/// Standard-normal noise tensor.
pub fn normal_noise<T: Scalar, R: Rng + ?Sized>(rng: &mut R, shape: &[usize]) -> crate::tensor::Tensor<T> {
    use rand_distr::{Distribution, StandardNormal};
    crate::tensor::Tensor::from_fn(shape, |_| {
        let v: f64 = StandardNormal.sample(rng);
        T::lit(v)
    })
}
