//! Monotonic alignment search between prior token statistics and latent frames.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Token index for every frame; monotone, starts at 0, ends at the last token,
/// and visits every token.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Alignment {
    tokens: Vec<usize>,
    n_tokens: usize,
}

impl Alignment {
    /// Build from per-token frame counts (all at least 1).
    pub fn from_durations(durations: &[usize]) -> Self {
        let tokens = durations
            .iter()
            .enumerate()
            .flat_map(|(i, &d)| std::iter::repeat_n(i, d))
            .collect();
        Alignment {
            tokens,
            n_tokens: durations.len(),
        }
    }

    pub fn tokens(&self) -> &[usize] {
        &self.tokens
    }

    pub fn frames(&self) -> usize {
        self.tokens.len()
    }

    pub fn durations(&self) -> Vec<usize> {
        let mut d = vec![0; self.n_tokens];
        for &t in &self.tokens {
            d[t] += 1;
        }
        d
    }

    pub fn is_valid(&self) -> bool {
        let Some(&last) = self.tokens.last() else {
            return false;
        };
        self.tokens[0] == 0
            && last + 1 == self.n_tokens
            && self.tokens.windows(2).all(|w| w[1] == w[0] || w[1] == w[0] + 1)
    }
}

/// `L[i][j] = log N(z[:, j]; mean[:, i], exp(log_std[:, i]))`.
pub fn log_likelihood<T: Scalar>(mean: &Tensor<T>, log_std: &Tensor<T>, z: &Tensor<T>) -> Vec<Vec<f64>> {
    let (d, n_text) = mean.dims2();
    let (_, n_frames) = z.dims2();
    let half_log_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
    (0..n_text)
        .map(|i| {
            (0..n_frames)
                .map(|j| {
                    (0..d)
                        .map(|c| {
                            let m = mean.at2(c, i).as_f64();
                            let s = log_std.at2(c, i).as_f64();
                            let x = z.at2(c, j).as_f64();
                            let u = (x - m) * (-s).exp();
                            -s - half_log_2pi - 0.5 * u * u
                        })
                        .sum()
                })
                .collect()
        })
        .collect()
}

/// Total log-likelihood of an alignment under `ll` from [`log_likelihood`].
pub fn alignment_score(ll: &[Vec<f64>], alignment: &Alignment) -> f64 {
    alignment.tokens().iter().enumerate().map(|(j, &i)| ll[i][j]).sum()
}

/// Most likely monotone surjective alignment. On ties, backtracking stays on
/// the current token rather than stepping to the previous one.
pub fn mas_align<T: Scalar>(mean: &Tensor<T>, log_std: &Tensor<T>, z: &Tensor<T>) -> Result<Alignment> {
    let n_text = mean.dims2().1;
    let n_frames = z.dims2().1;
    if n_text == 0 || n_frames < n_text {
        return Err(Error::TooFewFrames {
            frames: n_frames,
            tokens: n_text,
        });
    }
    mas_from_likelihood(&log_likelihood(mean, log_std, z))
}

pub fn mas_from_likelihood(ll: &[Vec<f64>]) -> Result<Alignment> {
    let n_text = ll.len();
    let n_frames = ll.first().map_or(0, Vec::len);
    if n_text == 0 || n_frames < n_text {
        return Err(Error::TooFewFrames {
            frames: n_frames,
            tokens: n_text,
        });
    }
    let neg = f64::NEG_INFINITY;
    // q[i][j]: best score of frames 0..=j with frame j on token i.
    let mut q = vec![vec![neg; n_frames]; n_text];
    q[0][0] = ll[0][0];
    for j in 1..n_frames {
        let lo = (n_text - 1).saturating_sub(n_frames - 1 - j);
        for i in lo..n_text.min(j + 1) {
            let stay = q[i][j - 1];
            let advance = if i > 0 { q[i - 1][j - 1] } else { neg };
            q[i][j] = ll[i][j] + stay.max(advance);
        }
    }
    let mut tokens = vec![0; n_frames];
    let mut i = n_text - 1;
    for j in (0..n_frames).rev() {
        tokens[j] = i;
        if j == 0 {
            break;
        }
        if i > 0 && (i == j || q[i - 1][j - 1] > q[i][j - 1]) {
            i -= 1;
        }
    }
    Ok(Alignment { tokens, n_tokens: n_text })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Every monotone surjective alignment of `frames` frames onto `n` tokens.
    fn all_alignments(n: usize, frames: usize) -> Vec<Alignment> {
        fn rec(n: usize, left: usize, acc: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
            if acc.len() == n {
                if left == 0 {
                    out.push(acc.clone());
                }
                return;
            }
            for d in 1..=left {
                acc.push(d);
                rec(n, left - d, acc, out);
                acc.pop();
            }
        }
        let mut out = Vec::new();
        rec(n, frames, &mut Vec::new(), &mut out);
        out.iter().map(|d| Alignment::from_durations(d)).collect()
    }

    #[test]
    fn single_token_takes_every_frame() {
        let ll = vec![vec![-1.0, -5.0, 2.0]];
        assert_eq!(mas_from_likelihood(&ll).unwrap().tokens(), &[0, 0, 0]);
    }

    #[test]
    fn equal_lengths_force_identity() {
        let ll = vec![vec![-9.0, 5.0, 5.0], vec![5.0, -9.0, 5.0], vec![5.0, 5.0, -9.0]];
        assert_eq!(mas_from_likelihood(&ll).unwrap().tokens(), &[0, 1, 2]);
    }

    #[test]
    fn too_few_frames_is_an_error() {
        let ll = vec![vec![0.0], vec![0.0]];
        assert!(matches!(
            mas_from_likelihood(&ll),
            Err(Error::TooFewFrames { frames: 1, tokens: 2 })
        ));
    }

    #[test]
    fn ties_stay_on_the_current_token() {
        let ll = vec![vec![0.0; 4], vec![0.0; 4]];
        // Backtracking from the last frame keeps the later token as long as possible.
        assert_eq!(mas_from_likelihood(&ll).unwrap().tokens(), &[0, 1, 1, 1]);
    }

    #[test]
    fn matches_brute_force_on_small_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let n = rng.random_range(1..=4);
            let frames = rng.random_range(n..=6);
            let d = 2;
            let mean = Tensor::from_fn(&[d, n], |_| rng.random_range(-2.0..2.0));
            let log_std = Tensor::from_fn(&[d, n], |_| rng.random_range(-1.0..1.0));
            let z = Tensor::from_fn(&[d, frames], |_| rng.random_range(-2.0..2.0));
            let a = mas_align::<f64>(&mean, &log_std, &z).unwrap();
            assert!(a.is_valid());
            let ll = log_likelihood(&mean, &log_std, &z);
            let best = all_alignments(n, frames)
                .iter()
                .map(|b| alignment_score(&ll, b))
                .fold(f64::NEG_INFINITY, f64::max);
            assert!((alignment_score(&ll, &a) - best).abs() < 1e-9);
        }
    }

    proptest! {
        #[test]
        fn output_is_monotone_and_surjective(
            n in 1usize..8,
            extra in 0usize..12,
            seed in any::<u64>(),
        ) {
            let frames = n + extra;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ll: Vec<Vec<f64>> = (0..n).map(|_| (0..frames).map(|_| rng.random_range(-5.0..5.0)).collect()).collect();
            let a = mas_from_likelihood(&ll).unwrap();
            prop_assert!(a.is_valid());
            prop_assert_eq!(a.frames(), frames);
            prop_assert_eq!(a.durations().iter().sum::<usize>(), frames);
        }
    }
}
