//! The complete model: generator and discriminator parameters, the frozen
//! speaker encoder, and the inference paths.

use rand::Rng;

use crate::ascl::{stop_gradient, Discriminator};
use crate::autodiff::{Graph, Var};
use crate::data::SpectralFeatures;
use crate::error::{Error, Result};
use crate::generator::{normal_noise, Alignment, DurationPredictor, Generator, ModelConfig, PosteriorEncoder};
use crate::params::{ParamStore, StoreKind};
use crate::scalar::Scalar;
use crate::speaker::{RawSpeakerEmbedding, SpeakerEncoder, StandInEncoder};
use crate::spectral::mel_filterbank;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct Model<T: Scalar> {
    pub config: ModelConfig,
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub gen_params: ParamStore<T>,
    pub disc_params: ParamStore<T>,
    pub speaker_encoder: StandInEncoder<T>,
    pub filterbank: Tensor<T>,
    pub steps_trained: u64,
}

/// Speaker conditioning derived from one reference utterance.
pub struct Conditioning<'g, T: Scalar> {
    pub speaker: Var<'g, T>,
    pub reference: Var<'g, T>,
}

impl<T: Scalar> Model<T> {
    pub fn new<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Result<Self> {
        let mut gen_params = ParamStore::new(StoreKind::Generator);
        let generator = Generator::new(config, &mut gen_params, rng)?;
        let mut disc_params = ParamStore::new(StoreKind::Discriminator);
        let discriminator = Discriminator::new(&mut disc_params, rng);
        Ok(Model {
            config: config.clone(),
            generator,
            discriminator,
            gen_params,
            disc_params,
            speaker_encoder: StandInEncoder::shipped(),
            filterbank: mel_filterbank(),
            steps_trained: 0,
        })
    }

    pub fn raw_embedding(&self, mel: &Tensor<T>) -> Result<RawSpeakerEmbedding<T>> {
        self.speaker_encoder.embed(mel)
    }

    /// Projected speaker embedding `g` as a `[256, 1]` node.
    pub fn speaker<'g>(&self, g: &'g Graph<T>, raw: &RawSpeakerEmbedding<T>) -> Var<'g, T> {
        self.generator
            .projection
            .forward(g, &self.gen_params, g.constant(raw.tensor().clone()))
    }

    pub fn conditioning<'g>(&self, g: &'g Graph<T>, mel: &Tensor<T>) -> Result<Conditioning<'g, T>> {
        let raw = self.raw_embedding(mel)?;
        Ok(Conditioning {
            speaker: self.speaker(g, &raw),
            reference: self.generator.reference.forward(g, &self.gen_params, g.constant(mel.clone())),
        })
    }

    pub fn decode<'g>(&self, g: &'g Graph<T>, z_v: Var<'g, T>) -> Var<'g, T> {
        self.generator.decoder.forward(g, &self.gen_params, z_v)
    }

    /// `Dec(f^-1(sg(f(z_v, g_s)), g_q))`.
    pub fn query_path<'g>(
        &self,
        g: &'g Graph<T>,
        z_v: Var<'g, T>,
        g_s: Var<'g, T>,
        g_q: Var<'g, T>,
    ) -> Result<Var<'g, T>> {
        let flow = &self.generator.flow;
        let (z_f, _) = flow.forward(g, &self.gen_params, z_v, g_s)?;
        let z_q = flow.inverse(g, &self.gen_params, stop_gradient(z_f), g_q)?;
        Ok(self.decode(g, z_q))
    }

    /// Re-voice a support utterance with the speaker of a query utterance.
    pub fn generate_query<R: Rng + ?Sized>(&self, support: &[T], query: &[T], rng: &mut R) -> Result<Vec<T>> {
        let s = SpectralFeatures::extract(support)?;
        let q = SpectralFeatures::extract(query)?;
        let g = Graph::new();
        let g_s = self.speaker(&g, &self.raw_embedding(&s.mel)?);
        let g_q = self.speaker(&g, &self.raw_embedding(&q.mel)?);
        let stats = self.generator.posterior.stats(&g, &self.gen_params, &s.linear);
        let noise = normal_noise(rng, &stats.mean.shape());
        let z_v = PosteriorEncoder::sample(&stats, &noise);
        Ok(self.query_path(&g, z_v, g_s, g_q)?.value().data().to_vec())
    }

    /// Text-to-speech in the voice of `reference`. Output length is
    /// `256 * sum(durations)`.
    pub fn synthesize<R: Rng + ?Sized>(
        &self,
        tokens: &[u32],
        reference: &[T],
        noise_scale: T,
        rng: &mut R,
    ) -> Result<Synthesis<T>> {
        if self.steps_trained == 0 {
            return Err(Error::UntrainedModel);
        }
        if tokens.is_empty() {
            return Err(Error::EmptyText);
        }
        let feats = SpectralFeatures::extract(reference)?;
        let g = Graph::new();
        let cond = self.conditioning(&g, &feats.mel)?;
        let (hidden, prior) = self.generator.text.forward(&g, &self.gen_params, tokens);
        let log_d = self
            .generator
            .duration
            .forward(&g, &self.gen_params, hidden, cond.speaker, cond.reference);
        let durations = DurationPredictor::frames(log_d.value().data());
        let expanded = prior.expand(&Alignment::from_durations(&durations));
        let noise = normal_noise::<T, _>(rng, &expanded.mean.shape()).map(|e| e * noise_scale);
        let z_f = expanded
            .mean
            .add(expanded.log_std.exp().mul(g.constant(noise)));
        let z_v = self.generator.flow.inverse(&g, &self.gen_params, z_f, cond.speaker)?;
        let wave = self.decode(&g, z_v).value().data().to_vec();
        Ok(Synthesis { wave, durations })
    }
}

#[derive(Clone, Debug)]
pub struct Synthesis<T> {
    pub wave: Vec<T>,
    pub durations: Vec<usize>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::HOP;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tone(n: usize, f: f32) -> Vec<f32> {
        (0..n).map(|i| (i as f32 * f).sin() * 0.4).collect()
    }

    #[test]
    fn untrained_model_refuses_to_synthesize() {
        let model = Model::<f32>::new(&ModelConfig::default(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let r = model.synthesize(&[1, 2], &tone(4000, 0.05), 0.667, &mut ChaCha8Rng::seed_from_u64(1));
        assert!(matches!(r, Err(Error::UntrainedModel)));
    }

    #[test]
    fn synthesis_length_and_determinism() {
        let mut model = Model::<f32>::new(&ModelConfig::default(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        model.steps_trained = 1;
        let reference = tone(6000, 0.05);
        let a = model.synthesize(&[1, 2, 3], &reference, 0.667, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let b = model.synthesize(&[1, 2, 3], &reference, 0.667, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a.wave, b.wave);
        assert_eq!(a.wave.len(), HOP * a.durations.iter().sum::<usize>());
        assert!(matches!(
            model.synthesize(&[], &reference, 0.667, &mut ChaCha8Rng::seed_from_u64(4)),
            Err(Error::EmptyText)
        ));
    }

    #[test]
    fn zero_noise_uses_the_prior_mean() {
        let mut model = Model::<f64>::new(&ModelConfig::default(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        model.steps_trained = 1;
        let reference: Vec<f64> = (0..5000).map(|i| (i as f64 * 0.02).sin() * 0.3).collect();
        let a = model.synthesize(&[3, 1], &reference, 0.0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = model.synthesize(&[3, 1], &reference, 0.0, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(a.wave, b.wave);
    }

    #[test]
    fn self_swap_reproduces_the_latent() {
        let model = Model::<f32>::new(&ModelConfig::default(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let wave = tone(5000, 0.07);
        let feats = SpectralFeatures::extract(&wave).unwrap();
        let g = Graph::new();
        let spk = model.speaker(&g, &model.raw_embedding(&feats.mel).unwrap());
        let stats = model.generator.posterior.stats(&g, &model.gen_params, &feats.linear);
        let z = stats.mean;
        let flow = &model.generator.flow;
        let (z_f, _) = flow.forward(&g, &model.gen_params, z, spk).unwrap();
        let back = flow.inverse(&g, &model.gen_params, z_f, spk).unwrap();
        assert!(back.value().zip_map(&z.value(), |a, b| a - b).max_abs() < 1e-4);
        let y = model.query_path(&g, z, spk, spk).unwrap();
        assert_eq!(y.shape(), vec![1, HOP * feats.frames()]);
    }
}
