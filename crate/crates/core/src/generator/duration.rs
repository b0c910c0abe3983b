//! Deterministic duration predictor conditioned on the speaker embedding `g`
//! and the reference embedding `g_d`. Predicts log-durations per token.

use rand::Rng;

use super::ModelConfig;
use crate::autodiff::{Graph, Var};
use crate::nn::{Conv1d, Linear};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::speaker::{REFERENCE_DIM, SPEAKER_DIM};
use crate::tensor::Conv1dSpec;

const KERNEL: usize = 3;

#[derive(Clone, Debug)]
pub struct DurationPredictor {
    cond_g: Linear,
    cond_ref: Linear,
    convs: Vec<Conv1d>,
    out: Conv1d,
}

impl DurationPredictor {
    pub fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, config: &ModelConfig, rng: &mut R) -> Self {
        let (h, p) = (config.hidden_channels, config.duration_hidden);
        DurationPredictor {
            cond_g: Linear::new(store, "duration.cond_g", SPEAKER_DIM, h, rng),
            cond_ref: Linear::new(store, "duration.cond_ref", REFERENCE_DIM, h, rng),
            convs: vec![
                Conv1d::new(store, "duration.conv.0", h, p, KERNEL, Conv1dSpec::same(KERNEL, 1), rng),
                Conv1d::new(store, "duration.conv.1", p, p, KERNEL, Conv1dSpec::same(KERNEL, 1), rng),
            ],
            out: Conv1d::new(store, "duration.out", p, 1, 1, Conv1dSpec::same(1, 1), rng),
        }
    }

    /// Log-durations `[1, T_text]`. The text hidden states and `g` are read
    /// through a stop gradient, so the duration loss trains only this module
    /// and the reference encoder.
    pub fn forward<'g, T: Scalar>(
        &self,
        g: &'g Graph<T>,
        store: &ParamStore<T>,
        text_hidden: Var<'g, T>,
        spk: Var<'g, T>,
        reference: Var<'g, T>,
    ) -> Var<'g, T> {
        let cond = self
            .cond_g
            .forward(g, store, spk.detach())
            .add(self.cond_ref.forward(g, store, reference));
        let mut h = text_hidden.detach().add_column(cond);
        for conv in &self.convs {
            h = conv.forward(g, store, h).relu();
        }
        self.out.forward(g, store, h)
    }

    /// Integer frame counts for inference: `ceil(exp(log_duration))`, at least 1.
    pub fn frames<T: Scalar>(log_durations: &[T]) -> Vec<usize> {
        log_durations
            .iter()
            .map(|&l| {
                let d = l.as_f64().min(20.0).exp().ceil();
                if d.is_finite() { (d as usize).max(1) } else { 1 }
            })
            .collect()
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
    fn one_positive_duration_per_token() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::<f32>::new(StoreKind::Generator);
        let cfg = ModelConfig::default();
        let dp = DurationPredictor::new(&mut store, &cfg, &mut rng);
        let g = Graph::new();
        let hidden = g.constant(Tensor::from_fn(&[64, 7], |i| (i as f32 * 0.01).sin()));
        let spk = g.constant(Tensor::full(&[SPEAKER_DIM, 1], 0.1));
        let r = g.constant(Tensor::full(&[REFERENCE_DIM, 1], -0.2));
        let logd = dp.forward(&g, &store, hidden, spk, r);
        assert_eq!(logd.shape(), vec![1, 7]);
        let frames = DurationPredictor::frames(logd.value().data());
        assert_eq!(frames.len(), 7);
        assert!(frames.iter().all(|&f| f >= 1));
    }

    #[test]
    fn frames_round_up() {
        assert_eq!(DurationPredictor::frames(&[0.0f64, 1.5f64.ln(), 1.1, -5.0]), vec![1, 2, 4, 1]);
    }
}
