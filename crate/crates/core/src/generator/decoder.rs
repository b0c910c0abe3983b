//! Waveform decoder: transposed-convolution upsampling from frame rate to
//! sample rate, with a dilated residual block after every stage.

use rand::Rng;

use super::ModelConfig;
use crate::autodiff::{Graph, Var};
use crate::nn::{Conv1d, ConvTranspose1d};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Conv1dSpec;

const EDGE_KERNEL: usize = 7;
const RES_KERNEL: usize = 3;
const RES_DILATIONS: [usize; 2] = [1, 3];
const MIN_CHANNELS: usize = 8;

#[derive(Clone, Debug)]
struct Stage {
    up: ConvTranspose1d,
    res: Vec<Conv1d>,
}

#[derive(Clone, Debug)]
pub struct Decoder {
    pre: Conv1d,
    stages: Vec<Stage>,
    post: Conv1d,
}

impl Decoder {
    pub fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, config: &ModelConfig, rng: &mut R) -> Self {
        let mut ch = config.decoder_channels;
        let pre = Conv1d::new(
            store,
            "decoder.pre",
            config.latent_channels,
            ch,
            EDGE_KERNEL,
            Conv1dSpec::same(EDGE_KERNEL, 1),
            rng,
        );
        let mut stages = Vec::new();
        for (i, &u) in config.upsample_rates.iter().enumerate() {
            let next = (ch / 2).max(MIN_CHANNELS);
            // Kernel 2u, stride u, padding u/2 maps length T to exactly u*T.
            let up = ConvTranspose1d::new(store, &format!("decoder.up.{i}"), ch, next, 2 * u, u, u / 2, rng);
            let res = RES_DILATIONS
                .iter()
                .enumerate()
                .map(|(j, &d)| {
                    Conv1d::new(store, &format!("decoder.res.{i}.{j}"), next, next, RES_KERNEL, Conv1dSpec::same(RES_KERNEL, d), rng)
                })
                .collect();
            stages.push(Stage { up, res });
            ch = next;
        }
        let post = Conv1d::new(store, "decoder.post", ch, 1, EDGE_KERNEL, Conv1dSpec::same(EDGE_KERNEL, 1), rng);
        Decoder { pre, stages, post }
    }

    /// `z: [D, T]` to a waveform `[1, 256 T]` in `[-1, 1]`.
    pub fn forward<'g, T: Scalar>(&self, g: &'g Graph<T>, store: &ParamStore<T>, z: Var<'g, T>) -> Var<'g, T> {
        let slope = T::lit(0.1);
        let mut h = self.pre.forward(g, store, z);
        for stage in &self.stages {
            h = stage.up.forward(g, store, h.leaky_relu(slope));
            for conv in &stage.res {
                h = h.add(conv.forward(g, store, h.leaky_relu(slope)));
            }
        }
        self.post.forward(g, store, h.leaky_relu(slope)).tanh()
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
    fn output_is_hop_times_frames_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::<f32>::new(StoreKind::Generator);
        let dec = Decoder::new(&mut store, &ModelConfig::default(), &mut rng);
        for frames in [1, 3, 10] {
            let z = Tensor::from_fn(&[16, frames], |i| ((i * 13 % 7) as f32 - 3.0) * 2.0);
            let g = Graph::new();
            let y = dec.forward(&g, &store, g.constant(z.clone()));
            assert_eq!(y.shape(), vec![1, 256 * frames]);
            assert!(y.value().data().iter().all(|v| (-1.0..=1.0).contains(v)));
            let again = dec.forward(&g, &store, g.constant(z));
            assert_eq!(*y.value(), *again.value());
        }
    }
}
