//! ELBO terms (mel reconstruction and flow-space KL) and the duration loss.

use super::GaussianStats;
use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::spectral::LOG_FLOOR;
use crate::tensor::Tensor;

fn same_shape(what: &str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(Error::ShapeMismatch(format!("{what}: {a:?} vs {b:?}")));
    }
    Ok(())
}

/// Differentiable log-mel of a `[1, L]` waveform with the given filterbank.
pub fn log_mel<'g, T: Scalar>(wave: Var<'g, T>, filterbank: &Tensor<T>) -> Var<'g, T> {
    let g = wave.graph();
    let fb = g.constant(filterbank.clone());
    fb.matmul(wave.stft_magnitude())
        .clamp(T::lit(LOG_FLOOR), T::max_value())
        .ln()
}

/// Mean absolute difference between two log-mel spectrograms.
pub fn recon_loss<'g, T: Scalar>(predicted_mel: Var<'g, T>, target_mel: &Tensor<T>) -> Result<Var<'g, T>> {
    same_shape("reconstruction mel", &predicted_mel.shape(), target_mel.shape())?;
    let target = predicted_mel.graph().constant(target_mel.clone());
    Ok(predicted_mel.sub(target).abs().mean())
}

/// Single-sample KL estimate per frame in flow space:
/// `[sum(log q(z_v) - log p(z_f)) - logdet] / T`, with `z_v = m_q + s_q * eps`
/// and the prior already expanded to one column per frame.
pub fn kl_loss<'g, T: Scalar>(
    z_f: Var<'g, T>,
    logdet: Var<'g, T>,
    prior: &GaussianStats<'g, T>,
    posterior_log_std: Var<'g, T>,
    eps: &Tensor<T>,
) -> Result<Var<'g, T>> {
    let shape = z_f.shape();
    same_shape("prior mean", &prior.mean.shape(), &shape)?;
    same_shape("prior log-std", &prior.log_std.shape(), &shape)?;
    same_shape("posterior log-std", &posterior_log_std.shape(), &shape)?;
    same_shape("posterior noise", eps.shape(), &shape)?;
    let frames = shape[1];
    let g = z_f.graph();
    let half = T::lit(0.5);
    let eps_term = eps.data().iter().map(|&e| e * e).sum::<T>() * half;
    let diff = z_f.sub(prior.mean);
    let mahalanobis = diff.square().mul(prior.log_std.scale(T::lit(-2.0)).exp()).scale(half);
    let per_elem = prior.log_std.sub(posterior_log_std).add(mahalanobis);
    let total = per_elem
        .sum()
        .add(g.constant(Tensor::scalar(-eps_term)))
        .sub(logdet);
    Ok(total.scale(T::one() / T::lit(frames as f64)))
}

/// Mean squared error between predicted and target log-durations.
pub fn duration_loss<'g, T: Scalar>(log_predicted: Var<'g, T>, durations: &[usize]) -> Result<Var<'g, T>> {
    same_shape("durations", &log_predicted.shape(), &[1, durations.len()])?;
    let target = Tensor::new(
        vec![1, durations.len()],
        durations.iter().map(|&d| T::lit((d as f64).ln())).collect(),
    );
    let target = log_predicted.graph().constant(target);
    Ok(log_predicted.sub(target).square().mean())
}
