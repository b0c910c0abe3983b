//! Adam over one parameter store.

use serde::{Deserialize, Serialize};

use crate::autodiff::Gradients;
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 2e-4,
            beta1: 0.8,
            beta2: 0.99,
            eps: 1e-9,
        }
    }
}

/// Moment estimates aligned with the parameter indices of one store.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub t: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, store: &ParamStore<T>) -> Self {
        let zeros: Vec<_> = store.iter().map(|(_, p)| Tensor::zeros(p.shape())).collect();
        Adam {
            config,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    /// One update at learning rate `lr`. Parameters without a gradient see a
    /// zero gradient, so their moments still decay.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &Gradients<T>, lr: f64) {
        self.t += 1;
        let c = self.config;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        let step = T::lit(lr / bc1);
        let eps = T::lit(c.eps);
        let inv_bc2 = T::lit(1.0 / bc2);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let i = id.index();
            let grad = grads.get(id);
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let p = store.get_mut(id).data_mut();
            for j in 0..p.len() {
                let gj = grad.map_or(T::zero(), |g| g.data()[j]);
                let mj = b1 * m.data()[j] + (T::one() - b1) * gj;
                let vj = b2 * v.data()[j] + (T::one() - b2) * gj * gj;
                m.data_mut()[j] = mj;
                v.data_mut()[j] = vj;
                p[j] -= step * mj / ((vj * inv_bc2).sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Graph;
    use crate::params::StoreKind;

    #[test]
    fn first_step_moves_by_learning_rate_against_the_gradient_sign() {
        let mut store = ParamStore::<f64>::new(StoreKind::Generator);
        let id = store.insert("w", Tensor::new(vec![2], vec![1.0, -2.0]));
        let mut adam = Adam::new(AdamConfig::default(), &store);
        let g = Graph::new();
        let grads = g.backward(g.param(&store, id).square().sum());
        adam.step(&mut store, &grads, 0.1);
        // Bias-corrected first step is lr * sign(grad) up to eps.
        let w = store.get(id).data();
        assert!((w[0] - 0.9).abs() < 1e-9 && (w[1] + 1.9).abs() < 1e-9, "{w:?}");
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut store = ParamStore::<f64>::new(StoreKind::Generator);
        let id = store.insert("w", Tensor::new(vec![3], vec![3.0, -1.0, 0.5]));
        let mut adam = Adam::new(AdamConfig::default(), &store);
        for _ in 0..3000 {
            let g = Graph::new();
            let grads = g.backward(g.param(&store, id).add_scalar(-1.0).square().sum());
            adam.step(&mut store, &grads, 1e-2);
        }
        assert!(store.get(id).data().iter().all(|v| (v - 1.0).abs() < 1e-2));
    }
}
