//! Posterior encoder `q(z_v | y)` over the linear spectrogram.

use rand::Rng;

use super::{GaussianStats, ModelConfig};
use crate::autodiff::{Graph, Var};
use crate::nn::{Conv1d, Linear};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::spectral::N_FREQ;
use crate::tensor::{Conv1dSpec, Tensor};

const KERNEL: usize = 5;

#[derive(Clone, Debug)]
pub struct PosteriorEncoder {
    pre: Linear,
    layers: Vec<Conv1d>,
    proj: Linear,
    latent: usize,
}

impl PosteriorEncoder {
    pub fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, config: &ModelConfig, rng: &mut R) -> Self {
        let h = config.hidden_channels;
        let layers = (0..config.posterior_layers)
            .map(|i| {
                let dilation = 1 << (i % 2);
                Conv1d::new(store, &format!("posterior.layers.{i}"), h, h, KERNEL, Conv1dSpec::same(KERNEL, dilation), rng)
            })
            .collect();
        PosteriorEncoder {
            pre: Linear::new(store, "posterior.pre", N_FREQ, h, rng),
            layers,
            proj: Linear::new(store, "posterior.proj", h, 2 * config.latent_channels, rng),
            latent: config.latent_channels,
        }
    }

    /// Statistics for a magnitude spectrogram `[513, T]` (log-compressed internally).
    pub fn stats<'g, T: Scalar>(&self, g: &'g Graph<T>, store: &ParamStore<T>, linear: &Tensor<T>) -> GaussianStats<'g, T> {
        let x = g.constant(linear.map(|v| v.ln_1p()));
        let mut h = self.pre.forward(g, store, x);
        for layer in &self.layers {
            h = h.add(layer.forward(g, store, h.leaky_relu(T::lit(0.1))));
        }
        GaussianStats::from_projection(self.proj.forward(g, store, h.leaky_relu(T::lit(0.1))), self.latent)
    }

    /// `z_v = mean + exp(log_std) * noise` with `noise` standard normal `[D, T]`.
    pub fn sample<'g, T: Scalar>(stats: &GaussianStats<'g, T>, noise: &Tensor<T>) -> Var<'g, T> {
        let eps = stats.mean.graph().constant(noise.clone());
        stats.mean.add(stats.log_std.exp().mul(eps))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::normal_noise;
    use crate::params::StoreKind;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (ParamStore<f64>, PosteriorEncoder, Tensor<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new(StoreKind::Generator);
        let cfg = ModelConfig {
            hidden_channels: 8,
            posterior_layers: 2,
            latent_channels: 4,
            ..Default::default()
        };
        let enc = PosteriorEncoder::new(&mut store, &cfg, &mut rng);
        let lin = Tensor::from_fn(&[N_FREQ, 6], |i| ((i * 31 % 97) as f64) * 0.05);
        (store, enc, lin)
    }

    #[test]
    fn minimum_log_std_gives_near_mean_sample() {
        let (mut store, enc, lin) = setup();
        let w = store.id("posterior.proj.weight").unwrap();
        let b = store.id("posterior.proj.bias").unwrap();
        for r in 4..8 {
            for v in store.get_mut(w).data_mut()[r * 8..(r + 1) * 8].iter_mut() {
                *v = 0.0;
            }
            store.get_mut(b).data_mut()[r] = -50.0;
        }
        let g = Graph::new();
        let stats = enc.stats(&g, &store, &lin);
        assert!(stats.log_std.value().data().iter().all(|&v| v == -7.0));
        let noise = normal_noise(&mut ChaCha8Rng::seed_from_u64(1), &[4, 6]);
        let z = PosteriorEncoder::sample(&stats, &noise);
        let mean = stats.mean.value();
        let norm = mean.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        let err = z.value().zip_map(&mean, |a, b| a - b).max_abs();
        assert!(err <= 1e-2 * norm + 1e-2);
    }

    #[test]
    fn same_noise_same_sample() {
        let (store, enc, lin) = setup();
        let sample = |seed| {
            let g = Graph::new();
            let stats = enc.stats(&g, &store, &lin);
            let noise = normal_noise(&mut ChaCha8Rng::seed_from_u64(seed), &[4, 6]);
            (*PosteriorEncoder::sample(&stats, &noise).value()).clone()
        };
        assert_eq!(sample(3), sample(3));
        assert_ne!(sample(3), sample(4));
    }

    #[test]
    fn monte_carlo_mean_matches_stats() {
        let (store, enc, lin) = setup();
        let g = Graph::new();
        let stats = enc.stats(&g, &store, &lin);
        let mean = stats.mean.value();
        let std = stats.log_std.value().map(f64::exp);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 10_000;
        let mut acc = Tensor::zeros(&[4, 6]);
        for _ in 0..n {
            let noise = normal_noise(&mut rng, &[4, 6]);
            acc.add_assign(&PosteriorEncoder::sample(&stats, &noise).value());
        }
        for i in 0..acc.len() {
            let emp = acc.data()[i] / n as f64;
            let bound = 3.0 * std.data()[i] / (n as f64).sqrt();
            assert!((emp - mean.data()[i]).abs() <= bound, "entry {i}: {emp} vs {}", mean.data()[i]);
        }
    }
}
