//! Speaker-consistency discriminator `D(y, g)`.
//!
//! Six grouped convolutions (kernel 4, stride 2, padding 1) with leaky ReLU,
//! then a kernel-3 convolution to a one-channel score map. Before every
//! downsampling layer a learned projection of `g` is added to the layer input
//! at every time step. Each layer maps length `L` to `floor(L / 2)`, so an
//! input of `L` samples yields `L >> 6` scores; [`MIN_WAVE_LEN`] gives one.

use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{Conv1d, Linear};
use crate::params::{ParamStore, StoreKind};
use crate::scalar::Scalar;
use crate::speaker::SPEAKER_DIM;
use crate::tensor::Conv1dSpec;

pub const CHANNELS: [usize; 6] = [16, 64, 128, 256, 256, 256];
pub const GROUPS: [usize; 6] = [1, 4, 4, 8, 8, 8];
pub const KERNEL: usize = 4;
pub const STRIDE: usize = 2;
pub const PADDING: usize = 1;
pub const POST_KERNEL: usize = 3;
pub const MIN_WAVE_LEN: usize = 64;
const SLOPE: f64 = 0.1;

/// Score-map length for an input of `len` samples.
pub fn score_len(len: usize) -> usize {
    // floor((L + 2p - k) / s) + 1 per layer; the post conv preserves length.
    CHANNELS.iter().fold(len, |l, _| {
        let padded = l + 2 * PADDING;
        if padded < KERNEL {
            0
        } else {
            (padded - KERNEL) / STRIDE + 1
        }
    })
}

#[derive(Clone, Debug)]
pub struct Discriminator {
    cond: Vec<Linear>,
    convs: Vec<Conv1d>,
    post: Conv1d,
}

impl Discriminator {
    pub fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, rng: &mut R) -> Self {
        assert_eq!(store.kind(), StoreKind::Discriminator, "discriminator needs its own store");
        let mut cond = Vec::new();
        let mut convs = Vec::new();
        let mut cin = 1;
        for (i, (&c, &groups)) in CHANNELS.iter().zip(&GROUPS).enumerate() {
            cond.push(Linear::new(store, &format!("disc.cond.{i}"), SPEAKER_DIM, cin, rng));
            let spec = Conv1dSpec {
                stride: STRIDE,
                padding: PADDING,
                dilation: 1,
                groups,
            };
            convs.push(Conv1d::new(store, &format!("disc.conv.{i}"), cin, c, KERNEL, spec, rng));
            cin = c;
        }
        let post = Conv1d::new(
            store,
            "disc.post",
            cin,
            1,
            POST_KERNEL,
            Conv1dSpec::same(POST_KERNEL, 1),
            rng,
        );
        Discriminator { cond, convs, post }
    }

    /// Score map `[1, score_len(L)]` for a waveform `[1, L]` and speaker embedding `[256, 1]`.
    pub fn forward<'g, T: Scalar>(
        &self,
        g: &'g Graph<T>,
        store: &ParamStore<T>,
        wave: Var<'g, T>,
        spk: Var<'g, T>,
    ) -> Result<Var<'g, T>> {
        let len = wave.shape()[1];
        if len < MIN_WAVE_LEN {
            return Err(Error::TooShort {
                got: len,
                min: MIN_WAVE_LEN,
                unit: "samples",
            });
        }
        let mut h = wave;
        for (cond, conv) in self.cond.iter().zip(&self.convs) {
            h = h.add_column(cond.forward(g, store, spk));
            h = conv.forward(g, store, h).leaky_relu(T::lit(SLOPE));
        }
        Ok(self.post.forward(g, store, h))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (ParamStore<f32>, Discriminator) {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new(StoreKind::Discriminator);
        let d = Discriminator::new(&mut store, &mut rng);
        (store, d)
    }

    #[test]
    fn score_length_follows_layer_arithmetic() {
        let (store, d) = setup();
        for (len, expected) in [(1024, 16), (4096, 64), (16000, 250)] {
            assert_eq!(score_len(len), expected);
            let g = Graph::new();
            let wave = g.constant(Tensor::from_fn(&[1, len], |i| (i as f32 * 0.01).sin()));
            let spk = g.constant(Tensor::zeros(&[SPEAKER_DIM, 1]));
            assert_eq!(d.forward(&g, &store, wave, spk).unwrap().shape(), vec![1, expected]);
        }
        assert_eq!(score_len(MIN_WAVE_LEN), 1);
        assert_eq!(score_len(MIN_WAVE_LEN - 1), 0);
    }

    #[test]
    fn short_input_is_rejected() {
        let (store, d) = setup();
        let g = Graph::new();
        let r = d.forward(&g, &store, g.constant(Tensor::zeros(&[1, 63])), g.constant(Tensor::zeros(&[SPEAKER_DIM, 1])));
        assert!(matches!(r, Err(Error::TooShort { got: 63, min: 64, .. })));
    }

    #[test]
    fn zero_wave_with_zero_projections_gives_a_constant_map() {
        let (mut store, d) = setup();
        let ids: Vec<_> = store.ids_in_module("disc.cond").collect();
        for id in ids {
            store.get_mut(id).data_mut().fill(0.0);
        }
        let g = Graph::new();
        let spk = g.constant(Tensor::from_fn(&[SPEAKER_DIM, 1], |i| i as f32));
        let s = d.forward(&g, &store, g.constant(Tensor::zeros(&[1, 4096])), spk).unwrap();
        let v = s.value();
        // Interior scores see only biases; the two edge scores also see padding.
        let interior = &v.data()[8..56];
        assert!(interior.iter().all(|&x| x == interior[0]));
    }

    #[test]
    fn scores_depend_on_the_speaker() {
        let (store, d) = setup();
        let g = Graph::new();
        let wave = g.constant(Tensor::from_fn(&[1, 2048], |i| (i as f32 * 0.03).sin() * 0.5));
        let a = d.forward(&g, &store, wave, g.constant(Tensor::full(&[SPEAKER_DIM, 1], 0.5))).unwrap();
        let b = d.forward(&g, &store, wave, g.constant(Tensor::full(&[SPEAKER_DIM, 1], -0.5))).unwrap();
        assert!(a.value().zip_map(&b.value(), |x, y| x - y).max_abs() > 0.0);
    }
}
