//! Text encoder: token embedding, residual convolutions, projection to the
//! prior `p(z_f | x)` per token.

use rand::Rng;

use super::{GaussianStats, ModelConfig};
use crate::autodiff::{Graph, Var};
use crate::nn::{uniform_init, Conv1d, Linear};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Conv1dSpec;

const KERNEL: usize = 5;

#[derive(Clone, Debug)]
pub struct TextEncoder {
    embedding: ParamId,
    layers: Vec<Conv1d>,
    proj: Linear,
    latent: usize,
}

impl TextEncoder {
    pub fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, config: &ModelConfig, rng: &mut R) -> Self {
        let h = config.hidden_channels;
        let embedding = store.insert("text.embedding", uniform_init(rng, &[h, config.vocab_size], 1, 1.0));
        let layers = (0..config.text_layers)
            .map(|i| Conv1d::new(store, &format!("text.layers.{i}"), h, h, KERNEL, Conv1dSpec::same(KERNEL, 1), rng))
            .collect();
        TextEncoder {
            embedding,
            layers,
            proj: Linear::new(store, "text.proj", h, 2 * config.latent_channels, rng),
            latent: config.latent_channels,
        }
    }

    /// Hidden states `[H, T_text]` and prior statistics `[D, T_text]`.
    /// Ids beyond the vocabulary fall back to the unknown id 0.
    pub fn forward<'g, T: Scalar>(
        &self,
        g: &'g Graph<T>,
        store: &ParamStore<T>,
        tokens: &[u32],
    ) -> (Var<'g, T>, GaussianStats<'g, T>) {
        let vocab = store.get(self.embedding).shape()[1];
        let idx: Vec<usize> = tokens
            .iter()
            .map(|&t| if (t as usize) < vocab { t as usize } else { 0 })
            .collect();
        let mut h = g.param(store, self.embedding).gather_cols(&idx);
        for layer in &self.layers {
            h = h.add(layer.forward(g, store, h.leaky_relu(T::lit(0.1))));
        }
        let stats = GaussianStats::from_projection(self.proj.forward(g, store, h), self.latent);
        (h, stats)
    }
}
