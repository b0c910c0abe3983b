//! Least-squares adversarial objectives. Every squared term is averaged over
//! its score map; the query-speaker terms are weighted by `alpha`.

use crate::autodiff::Var;
use crate::scalar::Scalar;

pub const DEFAULT_ALPHA: f64 = 0.3;

fn mean_sq_dist<'g, T: Scalar>(scores: Var<'g, T>, target: T) -> Var<'g, T> {
    scores.add_scalar(-target).square().mean()
}

/// `alpha (D(y_q, g_q) - 1)^2 + (D(y_s, g_s) - 1)^2 + alpha D(y~_q, g_q)^2 + D(y~_s, g_s)^2`.
///
/// Callers pass fake maps computed from detached generator outputs.
pub fn discriminator_loss<'g, T: Scalar>(
    real_q: Var<'g, T>,
    real_s: Var<'g, T>,
    fake_q: Var<'g, T>,
    fake_s: Var<'g, T>,
    alpha: T,
) -> Var<'g, T> {
    let query = mean_sq_dist(real_q, T::one()).add(mean_sq_dist(fake_q, T::zero()));
    let support = mean_sq_dist(real_s, T::one()).add(mean_sq_dist(fake_s, T::zero()));
    query.scale(alpha).add(support)
}

/// `alpha (D(y~_q, g_q) - 1)^2 + (D(y~_s, g_s) - 1)^2`.
pub fn generator_loss<'g, T: Scalar>(fake_q: Var<'g, T>, fake_s: Var<'g, T>, alpha: T) -> Var<'g, T> {
    mean_sq_dist(fake_q, T::one())
        .scale(alpha)
        .add(mean_sq_dist(fake_s, T::one()))
}

/// Identical values with no gradient path back to the producers.
pub fn stop_gradient<'g, T: Scalar>(z: Var<'g, T>) -> Var<'g, T> {
    z.detach()
}
