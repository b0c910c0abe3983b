//! WAV I/O (16-bit PCM mono) and band-limited resampling.

use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const SUPPORTED_RATES: [u32; 6] = [8_000, 16_000, 22_050, 24_000, 44_100, 48_000];

/// Zero crossings of the windowed-sinc kernel on each side.
const SINC_ZERO_CROSSINGS: f64 = 24.0;

/// Read a mono 16-bit PCM WAV into samples in `[-1, 1)` and its sample rate.
pub fn read_wav(path: &Path) -> Result<(Vec<f32>, u32)> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(Error::Schema {
            line: 0,
            message: format!(
                "{}: expected 16-bit PCM mono, got {} channel(s) {}-bit {:?}",
                path.display(),
                spec.channels,
                spec.bits_per_sample,
                spec.sample_format
            ),
        });
    }
    let samples = reader
        .samples::<i16>()
        .map(|s| s.map(|v| v as f32 / 32_768.0))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok((samples, spec.sample_rate))
}

/// Write mono 16-bit PCM. Samples are clipped to `[-1, 1]`.
pub fn write_wav<T: Scalar>(path: &Path, samples: &[T], sample_rate: u32) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec)?;
    for &s in samples {
        let v = s.as_f64().clamp(-1.0, 1.0);
        writer.write_sample((v * 32_767.0).round() as i16)?;
    }
    writer.finalize()?;
    Ok(())
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Windowed-sinc resampling from `sr_in` to `sr_out`.
///
/// Output length is `round(len * sr_out / sr_in)`; equal rates return the input
/// unchanged. The low-pass cutoff sits at the lower of the two Nyquist rates.
pub fn resample<T: Scalar>(wave: &[T], sr_in: u32, sr_out: u32) -> Result<Vec<T>> {
    for sr in [sr_in, sr_out] {
        if !SUPPORTED_RATES.contains(&sr) {
            return Err(Error::UnsupportedRate(sr));
        }
    }
    if sr_in == sr_out {
        return Ok(wave.to_vec());
    }
    let len = wave.len();
    let out_len = ((len as u64 * sr_out as u64) as f64 / sr_in as f64).round() as usize;
    let ratio = sr_in as f64 / sr_out as f64;
    let cutoff = (sr_out as f64 / sr_in as f64).min(1.0);
    let half_width = SINC_ZERO_CROSSINGS / cutoff;
    let input: Vec<f64> = wave.iter().map(|v| v.as_f64()).collect();
    let mut out = Vec::with_capacity(out_len);
    for n in 0..out_len {
        let center = n as f64 * ratio;
        let lo = ((center - half_width).ceil().max(0.0)) as usize;
        let hi = ((center + half_width).floor() as isize).min(len as isize - 1);
        let mut acc = 0.0;
        if hi >= lo as isize {
            for (i, &x) in input.iter().enumerate().take(hi as usize + 1).skip(lo) {
                let d = i as f64 - center;
                let window = 0.5 + 0.5 * (std::f64::consts::PI * d / half_width).cos();
                acc += x * cutoff * sinc(cutoff * d) * window;
            }
        }
        out.push(T::lit(acc));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rustfft::num_complex::Complex;
    use rustfft::FftPlanner;

    fn sine(freq: f64, sr: u32, len: usize) -> Vec<f64> {
        (0..len)
            .map(|n| (2.0 * std::f64::consts::PI * freq * n as f64 / sr as f64).sin())
            .collect()
    }

    fn peak_bin(x: &[f64]) -> usize {
        let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
        (0..buf.len() / 2)
            .max_by(|&a, &b| buf[a].norm().partial_cmp(&buf[b].norm()).unwrap())
            .unwrap()
    }

    #[test]
    fn same_rate_is_bitwise_passthrough() {
        let x: Vec<f32> = (0..100).map(|i| (i as f32 * 0.37).sin()).collect();
        assert_eq!(resample(&x, 24_000, 24_000).unwrap(), x);
    }

    #[test]
    fn one_second_at_48k_gives_24000_samples() {
        let x = vec![0.0f32; 48_000];
        assert_eq!(resample(&x, 48_000, 24_000).unwrap().len(), 24_000);
        let y = vec![0.0f32; 22_050];
        assert_eq!(resample(&y, 22_050, 24_000).unwrap().len(), 24_000);
    }

    #[test]
    fn output_length_rounds() {
        // 1001 * 24000 / 44100 = 544.76...
        assert_eq!(resample(&vec![0.0f64; 1001], 44_100, 24_000).unwrap().len(), 545);
    }

    #[test]
    fn unsupported_rate_is_rejected() {
        assert!(matches!(resample(&[0.0f32; 4], 12_345, 24_000), Err(Error::UnsupportedRate(12_345))));
    }

    #[test]
    fn sine_peak_survives_downsampling() {
        // 1 kHz at 48 kHz -> 24 kHz; FFT of 4800 output samples has 5 Hz bins,
        // so 1 kHz sits at bin 200.
        let x = sine(1000.0, 48_000, 9600);
        let y = resample(&x, 48_000, 24_000).unwrap();
        assert_eq!(y.len(), 4800);
        let expected = (1000.0 * 4800.0 / 24_000.0) as isize;
        assert!((peak_bin(&y) as isize - expected).abs() <= 1);
    }

    #[test]
    fn content_above_output_nyquist_is_suppressed() {
        let x = sine(15_000.0, 48_000, 9600);
        let y = resample(&x, 48_000, 24_000).unwrap();
        let interior = &y[200..y.len() - 200];
        let rms = (interior.iter().map(|v| v * v).sum::<f64>() / interior.len() as f64).sqrt();
        assert!(rms < 0.02, "aliased energy rms {rms}");
    }

    #[test]
    fn wav_roundtrip_quantizes_to_16_bit() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.wav");
        let x = vec![0.0f32, 0.5, -0.5, 0.999, -1.0];
        write_wav(&path, &x, 24_000).unwrap();
        let (y, sr) = read_wav(&path).unwrap();
        assert_eq!(sr, 24_000);
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() < 1.0 / 16_000.0);
        }
    }
}
