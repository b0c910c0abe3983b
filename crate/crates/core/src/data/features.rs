//! Linear and log-mel spectrograms at 24 kHz: FFT 1024, hop 256, window 1024,
//! 80 HTK mel bands over 0-12 kHz.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::spectral::{self, N_FREQ};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct SpectralFeatures<T> {
    /// `[513, frames]` magnitudes.
    pub linear: Tensor<T>,
    /// `[80, frames]` log-compressed mel energies.
    pub mel: Tensor<T>,
}

impl<T: Scalar> SpectralFeatures<T> {
    pub fn extract(wave: &[T]) -> Result<Self> {
        let linear = linear_spectrogram(wave)?;
        let mel = mel_spectrogram(&linear)?;
        Ok(SpectralFeatures { linear, mel })
    }

    pub fn frames(&self) -> usize {
        self.linear.dims2().1
    }
}

pub fn linear_spectrogram<T: Scalar>(wave: &[T]) -> Result<Tensor<T>> {
    if wave.is_empty() {
        return Err(Error::EmptyWaveform);
    }
    Ok(spectral::stft_magnitude(wave))
}

pub fn mel_spectrogram<T: Scalar>(linear: &Tensor<T>) -> Result<Tensor<T>> {
    if linear.shape().len() != 2 || linear.shape()[0] != N_FREQ {
        return Err(Error::ShapeMismatch(format!(
            "linear spectrogram must be [{N_FREQ}, T], got {:?}",
            linear.shape()
        )));
    }
    Ok(spectral::log_mel(&spectral::mel_filterbank(), linear))
}
