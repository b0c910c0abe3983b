//! Parameterized layers. Each layer owns [`ParamId`]s into a [`ParamStore`] and
//! builds its forward pass on a [`Graph`].

use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{Conv1dSpec, Conv2dSpec, Tensor};

/// Uniform(-bound, bound) with `bound = gain / sqrt(fan_in)`.
pub fn uniform_init<T: Scalar, R: Rng + ?Sized>(
    rng: &mut R,
    shape: &[usize],
    fan_in: usize,
    gain: f64,
) -> Tensor<T> {
    let bound = gain / (fan_in.max(1) as f64).sqrt();
    Tensor::from_fn(shape, |_| T::lit(rng.random_range(-bound..=bound)))
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        input: usize,
        output: usize,
        rng: &mut R,
    ) -> Self {
        let weight = store.insert(format!("{name}.weight"), uniform_init(rng, &[output, input], input, 1.0));
        let bias = store.insert(format!("{name}.bias"), uniform_init(rng, &[output, 1], input, 1.0));
        Linear { weight, bias }
    }

    pub fn zeroed<T: Scalar>(store: &mut ParamStore<T>, name: &str, input: usize, output: usize) -> Self {
        let weight = store.insert(format!("{name}.weight"), Tensor::zeros(&[output, input]));
        let bias = store.insert(format!("{name}.bias"), Tensor::zeros(&[output, 1]));
        Linear { weight, bias }
    }

    /// `W x + b` for `x: [in, N]`.
    pub fn forward<'g, T: Scalar>(
        &self,
        g: &'g Graph<T>,
        store: &ParamStore<T>,
        x: Var<'g, T>,
    ) -> Var<'g, T> {
        g.param(store, self.weight).matmul(x).add_column(g.param(store, self.bias))
    }
}

#[derive(Clone, Debug)]
pub struct Conv1d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub spec: Conv1dSpec,
}

impl Conv1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        input: usize,
        output: usize,
        kernel: usize,
        spec: Conv1dSpec,
        rng: &mut R,
    ) -> Self {
        let fan_in = input / spec.groups * kernel;
        let weight = store.insert(
            format!("{name}.weight"),
            uniform_init(rng, &[output, input / spec.groups, kernel], fan_in, 1.0),
        );
        let bias = store.insert(format!("{name}.bias"), uniform_init(rng, &[output], fan_in, 1.0));
        Conv1d { weight, bias, spec }
    }

    /// Same-length convolution with zero-initialized weight and bias.
    pub fn zeroed<T: Scalar>(store: &mut ParamStore<T>, name: &str, input: usize, output: usize, kernel: usize) -> Self {
        let weight = store.insert(format!("{name}.weight"), Tensor::zeros(&[output, input, kernel]));
        let bias = store.insert(format!("{name}.bias"), Tensor::zeros(&[output]));
        Conv1d {
            weight,
            bias,
            spec: Conv1dSpec::same(kernel, 1),
        }
    }

    pub fn forward<'g, T: Scalar>(
        &self,
        g: &'g Graph<T>,
        store: &ParamStore<T>,
        x: Var<'g, T>,
    ) -> Var<'g, T> {
        x.conv1d(g.param(store, self.weight), Some(g.param(store, self.bias)), self.spec)
    }

    pub fn kernel<T: Scalar>(&self, store: &ParamStore<T>) -> usize {
        store.get(self.weight).shape()[2]
    }
}

#[derive(Clone, Debug)]
pub struct ConvTranspose1d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub padding: usize,
}

impl ConvTranspose1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        input: usize,
        output: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = input * kernel / stride;
        let weight = store.insert(
            format!("{name}.weight"),
            uniform_init(rng, &[input, output, kernel], fan_in, 1.0),
        );
        let bias = store.insert(format!("{name}.bias"), uniform_init(rng, &[output], fan_in, 1.0));
        ConvTranspose1d {
            weight,
            bias,
            stride,
            padding,
        }
    }

    pub fn forward<'g, T: Scalar>(
        &self,
        g: &'g Graph<T>,
        store: &ParamStore<T>,
        x: Var<'g, T>,
    ) -> Var<'g, T> {
        x.conv_transpose1d(
            g.param(store, self.weight),
            Some(g.param(store, self.bias)),
            self.stride,
            self.padding,
        )
    }
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub spec: Conv2dSpec,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        input: usize,
        output: usize,
        kernel: (usize, usize),
        spec: Conv2dSpec,
        rng: &mut R,
    ) -> Self {
        let fan_in = input * kernel.0 * kernel.1;
        let weight = store.insert(
            format!("{name}.weight"),
            uniform_init(rng, &[output, input, kernel.0, kernel.1], fan_in, 1.0),
        );
        let bias = store.insert(format!("{name}.bias"), uniform_init(rng, &[output], fan_in, 1.0));
        Conv2d { weight, bias, spec }
    }

    pub fn forward<'g, T: Scalar>(
        &self,
        g: &'g Graph<T>,
        store: &ParamStore<T>,
        x: Var<'g, T>,
    ) -> Var<'g, T> {
        x.conv2d(g.param(store, self.weight), Some(g.param(store, self.bias)), self.spec)
    }
}

/// Single-layer GRU returning the final hidden state `[H, 1]`.
#[derive(Clone, Debug)]
pub struct Gru {
    input: Linear,
    hidden: Linear,
    size: usize,
}

impl Gru {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        // PyTorch-style init: both projections scaled by 1/sqrt(hidden).
        let input_proj = Linear {
            weight: store.insert(format!("{name}.w_ih"), uniform_init(rng, &[3 * hidden, input], hidden, 1.0)),
            bias: store.insert(format!("{name}.b_ih"), uniform_init(rng, &[3 * hidden, 1], hidden, 1.0)),
        };
        let hidden_proj = Linear {
            weight: store.insert(format!("{name}.w_hh"), uniform_init(rng, &[3 * hidden, hidden], hidden, 1.0)),
            bias: store.insert(format!("{name}.b_hh"), uniform_init(rng, &[3 * hidden, 1], hidden, 1.0)),
        };
        Gru {
            input: input_proj,
            hidden: hidden_proj,
            size: hidden,
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.size
    }

    /// Run over the columns of `x: [in, T]` from a zero state.
    pub fn forward<'g, T: Scalar>(
        &self,
        g: &'g Graph<T>,
        store: &ParamStore<T>,
        x: Var<'g, T>,
    ) -> Var<'g, T> {
        let h_size = self.size;
        let (_, steps) = x.value().dims2();
        let projected = self.input.forward(g, store, x);
        let mut h = g.constant(Tensor::zeros(&[h_size, 1]));
        for t in 0..steps {
            let xt = projected.slice_cols(t, t + 1);
            let ht = self.hidden.forward(g, store, h);
            let r = xt.slice_rows(0, h_size).add(ht.slice_rows(0, h_size)).sigmoid();
            let z = xt
                .slice_rows(h_size, 2 * h_size)
                .add(ht.slice_rows(h_size, 2 * h_size))
                .sigmoid();
            let n = xt
                .slice_rows(2 * h_size, 3 * h_size)
                .add(r.mul(ht.slice_rows(2 * h_size, 3 * h_size)))
                .tanh();
            h = n.add(z.mul(h.sub(n)));
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::StoreKind;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gru_matches_manual_recurrence() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::<f64>::new(StoreKind::Generator);
        let gru = Gru::new(&mut store, "gru", 2, 3, &mut rng);
        let x = Tensor::new(vec![2, 2], vec![0.5, -1.0, 0.25, 2.0]);
        let g = Graph::new();
        let h = gru.forward(&g, &store, g.constant(x.clone()));

        let w_ih = store.get(store.id("gru.w_ih").unwrap());
        let w_hh = store.get(store.id("gru.w_hh").unwrap());
        let b_ih = store.get(store.id("gru.b_ih").unwrap());
        let b_hh = store.get(store.id("gru.b_hh").unwrap());
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let mut state = [0.0f64; 3];
        for t in 0..2 {
            let xt = [x.at2(0, t), x.at2(1, t)];
            let gi: Vec<f64> = (0..9).map(|r| w_ih.at2(r, 0) * xt[0] + w_ih.at2(r, 1) * xt[1] + b_ih.data()[r]).collect();
            let gh: Vec<f64> = (0..9)
                .map(|r| (0..3).map(|c| w_hh.at2(r, c) * state[c]).sum::<f64>() + b_hh.data()[r])
                .collect();
            let mut next = [0.0; 3];
            for i in 0..3 {
                let r = sig(gi[i] + gh[i]);
                let z = sig(gi[3 + i] + gh[3 + i]);
                let n = (gi[6 + i] + r * gh[6 + i]).tanh();
                next[i] = (1.0 - z) * n + z * state[i];
            }
            state = next;
        }
        for i in 0..3 {
            assert!((h.value().data()[i] - state[i]).abs() < 1e-12);
        }
    }
}
