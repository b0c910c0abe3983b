//! Speaker-conditioned normalizing flow `z_f = f(z_v, g)`.
//!
//! Each layer is an affine coupling: the first half of the channels passes
//! through unchanged and predicts a shift and log-scale for the second half.
//! The speaker embedding enters every coupling network through a learned
//! projection added at every time step. Channels are reversed after every
//! layer, plus once more when the layer count is odd, so the overall channel
//! order is preserved. The final projection of every coupling network starts at zero, so a fresh
//! flow is exactly the identity.

use rand::Rng;

use super::ModelConfig;
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{Conv1d, Linear};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::speaker::SPEAKER_DIM;
use crate::tensor::Conv1dSpec;

const KERNEL: usize = 5;
const NET_LAYERS: usize = 2;

#[derive(Clone, Debug)]
struct Coupling {
    pre: Conv1d,
    cond: Linear,
    net: Vec<Conv1d>,
    post: Conv1d,
}

impl Coupling {
    /// Shift and log-scale for the second half, from the first half and `g`.
    fn params<'g, T: Scalar>(
        &self,
        g: &'g Graph<T>,
        store: &ParamStore<T>,
        x0: Var<'g, T>,
        spk: Var<'g, T>,
    ) -> (Var<'g, T>, Var<'g, T>) {
        let half = x0.shape()[0];
        let mut h = self.pre.forward(g, store, x0).add_column(self.cond.forward(g, store, spk));
        for conv in &self.net {
            h = h.add(conv.forward(g, store, h.leaky_relu(T::lit(0.1))));
        }
        let out = self.post.forward(g, store, h.leaky_relu(T::lit(0.1)));
        // tanh keeps each per-layer scale within [1/e, e].
        (out.slice_rows(0, half), out.slice_rows(half, 2 * half).tanh())
    }
}

#[derive(Clone, Debug)]
pub struct Flow {
    layers: Vec<Coupling>,
    channels: usize,
}

impl Flow {
    pub fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, config: &ModelConfig, rng: &mut R) -> Result<Self> {
        let d = config.latent_channels;
        if d % 2 == 1 || d == 0 {
            return Err(Error::OddChannels(d));
        }
        let half = d / 2;
        let hf = config.flow_hidden;
        let layers = (0..config.flow_layers)
            .map(|i| {
                let name = format!("flow.{i}");
                Coupling {
                    pre: Conv1d::new(store, &format!("{name}.pre"), half, hf, 1, Conv1dSpec::same(1, 1), rng),
                    cond: Linear::new(store, &format!("{name}.cond"), SPEAKER_DIM, hf, rng),
                    net: (0..NET_LAYERS)
                        .map(|j| {
                            Conv1d::new(store, &format!("{name}.net.{j}"), hf, hf, KERNEL, Conv1dSpec::same(KERNEL, 1), rng)
                        })
                        .collect(),
                    post: Conv1d::zeroed(store, &format!("{name}.post"), hf, d, 1),
                }
            })
            .collect();
        Ok(Flow { layers, channels: d })
    }

    fn check<T: Scalar>(&self, z: &Var<'_, T>) -> Result<()> {
        let c = z.shape()[0];
        if c % 2 == 1 {
            return Err(Error::OddChannels(c));
        }
        if c != self.channels {
            return Err(Error::ShapeMismatch(format!("flow expects {} channels, got {c}", self.channels)));
        }
        Ok(())
    }

    /// `z_f` and the total log-determinant of `dz_f/dz_v` (a scalar).
    pub fn forward<'g, T: Scalar>(
        &self,
        g: &'g Graph<T>,
        store: &ParamStore<T>,
        z: Var<'g, T>,
        spk: Var<'g, T>,
    ) -> Result<(Var<'g, T>, Var<'g, T>)> {
        self.check(&z)?;
        let half = self.channels / 2;
        let mut x = z;
        let mut logdet = g.constant(crate::tensor::Tensor::scalar(T::zero()));
        for layer in &self.layers {
            let x0 = x.slice_rows(0, half);
            let x1 = x.slice_rows(half, 2 * half);
            let (m, logs) = layer.params(g, store, x0, spk);
            let y1 = m.add(x1.mul(logs.exp()));
            logdet = logdet.add(logs.sum());
            x = Var::concat_rows(&[x0, y1]).flip_rows();
        }
        if self.layers.len() % 2 == 1 {
            x = x.flip_rows();
        }
        Ok((x, logdet))
    }

    pub fn inverse<'g, T: Scalar>(
        &self,
        g: &'g Graph<T>,
        store: &ParamStore<T>,
        z: Var<'g, T>,
        spk: Var<'g, T>,
    ) -> Result<Var<'g, T>> {
        self.check(&z)?;
        let half = self.channels / 2;
        let mut x = z;
        if self.layers.len() % 2 == 1 {
            x = x.flip_rows();
        }
        for layer in self.layers.iter().rev() {
            x = x.flip_rows();
            let x0 = x.slice_rows(0, half);
            let y1 = x.slice_rows(half, 2 * half);
            let (m, logs) = layer.params(g, store, x0, spk);
            let x1 = y1.sub(m).mul(logs.neg().exp());
            x = Var::concat_rows(&[x0, x1]);
        }
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::StoreKind;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small(d: usize) -> ModelConfig {
        ModelConfig {
            latent_channels: d,
            flow_hidden: 6,
            ..Default::default()
        }
    }

    /// Give the zero-initialized output layers random weights so the flow is non-trivial.
    pub(crate) fn perturb<T: Scalar>(store: &mut ParamStore<T>, seed: u64, scale: f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ids: Vec<_> = store.ids_in_module("flow").collect();
        for id in ids {
            if store.name(id).contains(".post.") {
                for v in store.get_mut(id).data_mut() {
                    *v = T::lit(rng.random_range(-scale..scale));
                }
            }
        }
    }

    #[test]
    fn odd_latent_is_rejected() {
        let mut store = ParamStore::<f32>::new(StoreKind::Generator);
        let r = Flow::new(&mut store, &small(3), &mut ChaCha8Rng::seed_from_u64(0));
        assert!(matches!(r, Err(Error::OddChannels(3))));
    }

    #[test]
    fn fresh_flow_is_identity_with_zero_logdet() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::<f32>::new(StoreKind::Generator);
        let flow = Flow::new(&mut store, &small(4), &mut rng).unwrap();
        let g = Graph::new();
        let z = Tensor::from_fn(&[4, 7], |i| (i as f32 * 0.7).sin());
        let spk = g.constant(Tensor::from_fn(&[SPEAKER_DIM, 1], |i| (i as f32).cos()));
        let (zf, logdet) = flow.forward(&g, &store, g.constant(z.clone()), spk).unwrap();
        assert_eq!(*zf.value(), z);
        assert_eq!(logdet.item(), 0.0);
        assert_eq!(*flow.inverse(&g, &store, g.constant(z.clone()), spk).unwrap().value(), z);
    }

    #[test]
    fn analytic_logdet_matches_finite_difference_jacobian() {
        // D = 4, T = 3: the Jacobian is 12 x 12, log|det| by LU.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::<f64>::new(StoreKind::Generator);
        let flow = Flow::new(&mut store, &small(4), &mut rng).unwrap();
        perturb(&mut store, 3, 0.5);
        let spk = Tensor::from_fn(&[SPEAKER_DIM, 1], |i| ((i * 7 % 11) as f64) * 0.1 - 0.5);
        let z = Tensor::from_fn(&[4, 3], |i| (i as f64 * 1.3).sin());
        let run = |z: &Tensor<f64>| {
            let g = Graph::new();
            let (zf, ld) = flow.forward(&g, &store, g.constant(z.clone()), g.constant(spk.clone())).unwrap();
            ((*zf.value()).clone(), ld.item())
        };
        let (_, analytic) = run(&z);
        let n = z.len();
        let h = 1e-6;
        let mut jac = vec![vec![0.0; n]; n];
        for j in 0..n {
            let mut p = z.clone();
            p.data_mut()[j] += h;
            let mut m = z.clone();
            m.data_mut()[j] -= h;
            let (fp, _) = run(&p);
            let (fm, _) = run(&m);
            for i in 0..n {
                jac[i][j] = (fp.data()[i] - fm.data()[i]) / (2.0 * h);
            }
        }
        let numeric = log_abs_det(jac);
        assert!((numeric - analytic).abs() < 1e-3, "{numeric} vs {analytic}");
    }

    fn log_abs_det(mut a: Vec<Vec<f64>>) -> f64 {
        let n = a.len();
        let mut acc = 0.0;
        for k in 0..n {
            let p = (k..n).max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs())).unwrap();
            a.swap(k, p);
            let pivot = a[k][k];
            acc += pivot.abs().ln();
            for i in k + 1..n {
                let f = a[i][k] / pivot;
                for j in k..n {
                    a[i][j] -= f * a[k][j];
                }
            }
        }
        acc
    }

    #[test]
    fn inverse_with_other_speaker_does_not_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::<f32>::new(StoreKind::Generator);
        let flow = Flow::new(&mut store, &small(4), &mut rng).unwrap();
        perturb(&mut store, 5, 0.5);
        let g = Graph::new();
        let z = g.constant(Tensor::from_fn(&[4, 5], |i| (i as f32 * 0.3).cos()));
        let a = g.constant(Tensor::from_fn(&[SPEAKER_DIM, 1], |i| (i as f32 * 0.1).sin()));
        let b = g.constant(Tensor::from_fn(&[SPEAKER_DIM, 1], |i| (i as f32 * 0.1).cos()));
        let (zf, _) = flow.forward(&g, &store, z, a).unwrap();
        let same = flow.inverse(&g, &store, zf, a).unwrap();
        let other = flow.inverse(&g, &store, zf, b).unwrap();
        assert!(same.value().zip_map(&z.value(), |x, y| x - y).max_abs() < 1e-4);
        assert!(other.value().zip_map(&z.value(), |x, y| x - y).max_abs() > 1e-2);
    }
}
