//! Trainable projection `g = W2 relu(W1 raw + b1) + b2`.

use rand::Rng;

use super::{RawSpeakerEmbedding, SpeakerEmbedding, RAW_DIM, SPEAKER_DIM};
use crate::autodiff::{Graph, Var};
use crate::error::Result;
use crate::nn::Linear;
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct SpeakerProjection {
    pub hidden: Linear,
    pub out: Linear,
}

impl SpeakerProjection {
    pub fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, rng: &mut R) -> Self {
        SpeakerProjection {
            hidden: Linear::new(store, "speaker_proj.hidden", RAW_DIM, SPEAKER_DIM, rng),
            out: Linear::new(store, "speaker_proj.out", SPEAKER_DIM, SPEAKER_DIM, rng),
        }
    }

    /// `raw: [512, N]` (one embedding per column) to `[256, N]`.
    pub fn forward<'g, T: Scalar>(&self, g: &'g Graph<T>, store: &ParamStore<T>, raw: Var<'g, T>) -> Var<'g, T> {
        let h = self.hidden.forward(g, store, raw).relu();
        self.out.forward(g, store, h)
    }

    /// Data-dependent initialization: rescale each layer so that, over `raws`,
    /// every pre-activation of the hidden layer and every output unit has zero
    /// mean and unit variance. The raw embeddings share a large common
    /// component, so without this the speaker-dependent part of `g` is tiny.
    pub fn standardize<T: Scalar>(&self, store: &mut ParamStore<T>, raws: &[&RawSpeakerEmbedding<T>]) {
        if raws.len() < 2 {
            return;
        }
        let batch = Tensor::from_fn(&[RAW_DIM, raws.len()], |i| {
            let (r, c) = (i / raws.len(), i % raws.len());
            raws[c].tensor().data()[r]
        });
        let layer_out = |store: &ParamStore<T>, relu_hidden: bool, layer: &Linear| {
            let g = Graph::new();
            let h = self.hidden.forward(&g, store, g.constant(batch.clone()));
            let out = if relu_hidden { layer.forward(&g, store, h.relu()) } else { h };
            (*out.value()).clone()
        };
        let hidden = layer_out(store, false, &self.hidden);
        rescale(store, &self.hidden, &hidden);
        let out = layer_out(store, true, &self.out);
        rescale(store, &self.out, &out);
    }

    pub fn project<T: Scalar>(&self, store: &ParamStore<T>, raw: &RawSpeakerEmbedding<T>) -> Result<SpeakerEmbedding<T>> {
        let g = Graph::new();
        let out = self.forward(&g, store, g.constant(raw.tensor().clone()));
        SpeakerEmbedding::new((*out.value()).clone())
    }
}

/// `W, b <- (W, b - mean) / std` row by row, from activations `[out, N]`.
fn rescale<T: Scalar>(store: &mut ParamStore<T>, layer: &Linear, act: &Tensor<T>) {
    let (rows, n) = act.dims2();
    for r in 0..rows {
        let vals: Vec<f64> = (0..n).map(|c| act.at2(r, c).as_f64()).collect();
        let mean = vals.iter().sum::<f64>() / n as f64;
        let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        let inv = 1.0 / std.max(1e-6);
        let w = store.get_mut(layer.weight);
        let cols = w.shape()[1];
        for v in &mut w.data_mut()[r * cols..(r + 1) * cols] {
            *v = T::lit(v.as_f64() * inv);
        }
        let b = &mut store.get_mut(layer.bias).data_mut()[r];
        *b = T::lit((b.as_f64() - mean) * inv);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::StoreKind;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_first_layer_collapses_to_output_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::<f64>::new(StoreKind::Generator);
        let proj = SpeakerProjection::new(&mut store, &mut rng);
        store.get_mut(proj.hidden.weight).data_mut().fill(0.0);
        store.get_mut(proj.hidden.bias).data_mut().fill(0.0);
        let c = Tensor::from_fn(&[SPEAKER_DIM, 1], |i| i as f64 * 0.01 - 1.0);
        *store.get_mut(proj.out.bias) = c.clone();
        for seed in 0..3 {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let raw = RawSpeakerEmbedding::new(Tensor::from_fn(&[RAW_DIM], |_| r.random_range(-3.0..3.0))).unwrap();
            assert_eq!(proj.project(&store, &raw).unwrap().tensor(), &c);
        }
    }

    #[test]
    fn first_layer_receives_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::<f64>::new(StoreKind::Generator);
        let proj = SpeakerProjection::new(&mut store, &mut rng);
        let g = Graph::new();
        let raw = g.constant(Tensor::from_fn(&[RAW_DIM, 1], |i| (i as f64 * 0.37).sin()));
        let grads = g.backward(proj.forward(&g, &store, raw).square().sum());
        let gw = grads.get(proj.hidden.weight).unwrap();
        assert!(gw.max_abs() > 0.0);
    }
}
