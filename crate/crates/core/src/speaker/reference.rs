//! Reference encoder producing the utterance-level embedding `g_d`: three
//! strided 2-D convolutions over the mel, a GRU across time, and a tanh
//! projection to 256.

use rand::Rng;

use super::{check_frames, ReferenceEmbedding, REFERENCE_DIM};
use crate::autodiff::{Graph, Var};
use crate::error::Result;
use crate::nn::{Conv2d, Gru, Linear};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::spectral::N_MELS;
use crate::tensor::{Conv2dSpec, Tensor};

const CHANNELS: [usize; 3] = [8, 16, 32];
const GRU_HIDDEN: usize = 128;
const SPEC: Conv2dSpec = Conv2dSpec {
    stride: (2, 2),
    padding: (1, 1),
};

#[derive(Clone, Debug)]
pub struct ReferenceEncoder {
    convs: Vec<Conv2d>,
    gru: Gru,
    out: Linear,
}

fn downsampled(n: usize) -> usize {
    (0..CHANNELS.len()).fold(n, |n, _| SPEC.output_dims(n, 1, 3, 1).0)
}

impl ReferenceEncoder {
    pub fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, rng: &mut R) -> Self {
        let mut convs = Vec::new();
        let mut cin = 1;
        for (i, &c) in CHANNELS.iter().enumerate() {
            convs.push(Conv2d::new(store, &format!("ref_encoder.conv{i}"), cin, c, (3, 3), SPEC, rng));
            cin = c;
        }
        let rnn_in = CHANNELS[CHANNELS.len() - 1] * downsampled(N_MELS);
        ReferenceEncoder {
            convs,
            gru: Gru::new(store, "ref_encoder.gru", rnn_in, GRU_HIDDEN, rng),
            out: Linear::new(store, "ref_encoder.out", GRU_HIDDEN, REFERENCE_DIM, rng),
        }
    }

    /// `mel: [80, T]` to `[256, 1]`.
    pub fn forward<'g, T: Scalar>(&self, g: &'g Graph<T>, store: &ParamStore<T>, mel: Var<'g, T>) -> Var<'g, T> {
        let frames = mel.shape()[1];
        let mut x = mel.reshape(&[1, N_MELS, frames]);
        for conv in &self.convs {
            x = conv.forward(g, store, x).relu();
        }
        let s = x.shape();
        let seq = x.reshape(&[s[0] * s[1], s[2]]);
        let h = self.gru.forward(g, store, seq);
        self.out.forward(g, store, h).tanh()
    }

    pub fn embed<T: Scalar>(&self, store: &ParamStore<T>, mel: &Tensor<T>) -> Result<ReferenceEmbedding<T>> {
        check_frames(mel)?;
        let g = Graph::new();
        let out = self.forward(&g, store, g.constant(mel.clone()));
        ReferenceEmbedding::new((*out.value()).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::params::StoreKind;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (ParamStore<f32>, ReferenceEncoder) {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new(StoreKind::Generator);
        let enc = ReferenceEncoder::new(&mut store, &mut rng);
        (store, enc)
    }

    #[test]
    fn output_is_256_for_short_and_long_inputs() {
        let (store, enc) = setup();
        for frames in [10, 200] {
            let mel = Tensor::from_fn(&[80, frames], |i| ((i % 13) as f32) * 0.3 - 5.0);
            let a = enc.embed(&store, &mel).unwrap();
            assert_eq!(a.tensor().shape(), &[REFERENCE_DIM, 1]);
            assert_eq!(a, enc.embed(&store, &mel).unwrap());
        }
    }

    #[test]
    fn rejects_fewer_than_four_frames() {
        let (store, enc) = setup();
        assert!(matches!(enc.embed(&store, &Tensor::zeros(&[80, 3])), Err(Error::TooShort { .. })));
    }

    #[test]
    fn rnn_input_width_follows_conv_stack() {
        // 80 mel bins -> 40 -> 20 -> 10 after three stride-2 layers.
        assert_eq!(downsampled(80), 10);
    }
}
