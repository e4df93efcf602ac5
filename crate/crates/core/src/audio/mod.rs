//! Waveforms, STFT analysis/synthesis, input features and WAV I/O.

mod features;
mod stft;
pub mod wav;

pub use features::{compute_stats, log_features, mel_filterbank, FeatureBlock, FeatureTensor, MomentStats, LOG_FLOOR};
pub use stft::{istft, istft_adjoint, stft, synthesize_frames, SpectrogramTensor, StftConfig, WindowKind};

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::scalar::Real;

pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;

/// Multi-channel real waveform, `channels x samples`.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveformBlock<T> {
    pub samples: Array2<T>,
    pub sample_rate: u32,
}

impl<T: Real> WaveformBlock<T> {
    pub fn new(samples: Array2<T>, sample_rate: u32) -> Result<Self> {
        if samples.nrows() == 0 || samples.ncols() == 0 {
            return Err(Error::EmptyInput("waveform"));
        }
        if samples.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("waveform"));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn mono(samples: Vec<T>, sample_rate: u32) -> Result<Self> {
        let n = samples.len();
        let arr = Array2::from_shape_vec((1, n), samples).map_err(|e| Error::Shape(e.to_string()))?;
        Self::new(arr, sample_rate)
    }

    pub fn zeros(channels: usize, len: usize, sample_rate: u32) -> Self {
        Self { samples: Array2::zeros((channels, len)), sample_rate }
    }

    pub fn channels(&self) -> usize {
        self.samples.nrows()
    }

    pub fn len(&self) -> usize {
        self.samples.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.len() as f64 / f64::from(self.sample_rate)
    }

    pub fn cast<U: Real>(&self) -> WaveformBlock<U> {
        WaveformBlock {
            samples: self.samples.mapv(|x| U::of(x.to_f64_lossy())),
            sample_rate: self.sample_rate,
        }
    }
}
