//! STFT and mel filterbank kernels shared by feature extraction and the
//! differentiable reconstruction loss.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const SAMPLE_RATE: u32 = 24_000;
pub const N_FFT: usize = 1024;
pub const HOP: usize = 256;
pub const WIN: usize = 1024;
pub const N_FREQ: usize = N_FFT / 2 + 1;
pub const N_MELS: usize = 80;
pub const MEL_FMIN: f64 = 0.0;
pub const MEL_FMAX: f64 = 12_000.0;
pub const LOG_FLOOR: f64 = 1e-5;

/// Frame count of a center-padded STFT.
pub fn num_frames(len: usize) -> usize {
    len / HOP + 1
}

/// Periodic Hann window of length [`WIN`].
pub fn hann_window<T: Scalar>() -> Vec<T> {
    (0..WIN)
        .map(|n| {
            let phase = 2.0 * std::f64::consts::PI * n as f64 / WIN as f64;
            T::lit(0.5 - 0.5 * phase.cos())
        })
        .collect()
}

/// Map an index of the reflect-padded signal back into `[0, len)`.
///
/// Reflection repeats for pads longer than the signal; a length-1 signal
/// reflects onto its only sample.
pub fn reflect_index(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let mut m = i.rem_euclid(period);
    if m >= len as isize {
        m = period - m;
    }
    m as usize
}

/// Saved forward state for the magnitude-STFT backward pass.
#[derive(Clone, Debug)]
pub struct StftCache<T> {
    len: usize,
    frames: usize,
    spectra: Vec<Complex<T>>,
}

fn frame_spectra<T: Scalar>(x: &[T]) -> (usize, Vec<Complex<T>>) {
    let len = x.len();
    let frames = num_frames(len);
    let window = hann_window::<T>();
    let mut planner = FftPlanner::<T>::new();
    let fft = planner.plan_fft_forward(N_FFT);
    let pad = (N_FFT / 2) as isize;
    let mut spectra = Vec::with_capacity(frames * N_FREQ);
    let mut buf = vec![Complex::new(T::zero(), T::zero()); N_FFT];
    for f in 0..frames {
        let start = (f * HOP) as isize - pad;
        for (n, slot) in buf.iter_mut().enumerate() {
            let src = reflect_index(start + n as isize, len);
            *slot = Complex::new(x[src] * window[n], T::zero());
        }
        fft.process(&mut buf);
        spectra.extend_from_slice(&buf[..N_FREQ]);
    }
    (frames, spectra)
}

/// Magnitude STFT, `[N_FREQ, frames]`: Hann window, reflect center padding.
pub fn stft_magnitude<T: Scalar>(x: &[T]) -> Tensor<T> {
    stft_magnitude_with_cache(x).0
}

pub fn stft_magnitude_with_cache<T: Scalar>(x: &[T]) -> (Tensor<T>, StftCache<T>) {
    assert!(!x.is_empty(), "STFT of an empty signal");
    let (frames, spectra) = frame_spectra(x);
    let mut mag = vec![T::zero(); N_FREQ * frames];
    for f in 0..frames {
        for k in 0..N_FREQ {
            mag[k * frames + f] = spectra[f * N_FREQ + k].norm();
        }
    }
    (
        Tensor::new(vec![N_FREQ, frames], mag),
        StftCache {
            len: x.len(),
            frames,
            spectra,
        },
    )
}

/// Gradient of `sum(grad * |STFT(x)|)` with respect to `x`, as a flat `[1, L]` tensor.
///
/// Bins with zero magnitude pass no gradient.
pub fn stft_magnitude_backward<T: Scalar>(cache: &StftCache<T>, grad: &Tensor<T>) -> Tensor<T> {
    let window = hann_window::<T>();
    let mut planner = FftPlanner::<T>::new();
    let ifft = planner.plan_fft_inverse(N_FFT);
    let pad = (N_FFT / 2) as isize;
    let frames = cache.frames;
    let mut dx = vec![T::zero(); cache.len];
    let mut buf = vec![Complex::new(T::zero(), T::zero()); N_FFT];
    for f in 0..frames {
        buf.iter_mut().for_each(|c| *c = Complex::new(T::zero(), T::zero()));
        for k in 0..N_FREQ {
            let x = cache.spectra[f * N_FREQ + k];
            let m = x.norm();
            if m > T::zero() {
                buf[k] = x * (grad.data()[k * frames + f] / m);
            }
        }
        // sum_k Y_k e^{+i 2 pi k n / N}; only the real part contributes.
        ifft.process(&mut buf);
        let start = (f * HOP) as isize - pad;
        for n in 0..N_FFT {
            let src = reflect_index(start + n as isize, cache.len);
            dx[src] += window[n] * buf[n].re;
        }
    }
    Tensor::new(vec![1, cache.len], dx)
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular HTK-scale filterbank `[N_MELS, N_FREQ]` spanning 0 Hz to 12 kHz.
///
/// Filters have unit peak and no area normalization.
pub fn mel_filterbank<T: Scalar>() -> Tensor<T> {
    let mel_lo = hz_to_mel(MEL_FMIN);
    let mel_hi = hz_to_mel(MEL_FMAX);
    let edges: Vec<f64> = (0..N_MELS + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (N_MELS + 1) as f64))
        .collect();
    let bin_hz = |k: usize| k as f64 * SAMPLE_RATE as f64 / N_FFT as f64;
    let mut fb = vec![T::zero(); N_MELS * N_FREQ];
    for m in 0..N_MELS {
        let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..N_FREQ {
            let f = bin_hz(k);
            let w = if f > lo && f <= center {
                (f - lo) / (center - lo)
            } else if f > center && f < hi {
                (hi - f) / (hi - center)
            } else {
                0.0
            };
            fb[m * N_FREQ + k] = T::lit(w);
        }
    }
    Tensor::new(vec![N_MELS, N_FREQ], fb)
}

/// `log(max(fb @ linear, 1e-5))`.
pub fn log_mel<T: Scalar>(filterbank: &Tensor<T>, linear: &Tensor<T>) -> Tensor<T> {
    let floor = T::lit(LOG_FLOOR);
    crate::tensor::matmul(filterbank, false, linear, false).map(|v| v.max(floor).ln())
}
