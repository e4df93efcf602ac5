use ndarray::{Array2, Array3, ArrayView2, Axis};
use num_complex::Complex;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::WaveformBlock;
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WindowKind {
    /// Square root of the periodic Hann window, used for analysis and synthesis.
    SqrtHann,
    Rectangular,
}

impl WindowKind {
    fn sample(self, n: usize, len: usize) -> f64 {
        match self {
            WindowKind::SqrtHann => (std::f64::consts::PI * n as f64 / len as f64).sin(),
            WindowKind::Rectangular => 1.0,
        }
    }
}

/// Frame layout of the short-time Fourier transform.
///
/// The signal is padded with `window_length - shift` zeros on both sides so
/// that every original sample is covered by the same number of frames. Frame
/// `t` therefore spans original samples `[t*shift - pad, t*shift - pad + window_length)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    pub window_length: usize,
    pub shift: usize,
    pub window: WindowKind,
    pub fft_size: usize,
}

impl Default for StftConfig {
    /// 64 ms window and 16 ms shift at 16 kHz.
    fn default() -> Self {
        Self { window_length: 1024, shift: 256, window: WindowKind::SqrtHann, fft_size: 1024 }
    }
}

impl StftConfig {
    pub fn new(window_length: usize, shift: usize) -> Result<Self> {
        let cfg = Self { window_length, shift, window: WindowKind::SqrtHann, fft_size: window_length };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_durations(window_secs: f64, shift_secs: f64, sample_rate: u32) -> Result<Self> {
        let sr = f64::from(sample_rate);
        Self::new((window_secs * sr).round() as usize, (shift_secs * sr).round() as usize)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_length < 2 || self.shift == 0 {
            return Err(Error::Config(format!(
                "window {} / shift {} too small",
                self.window_length, self.shift
            )));
        }
        if self.window_length % self.shift != 0 {
            return Err(Error::Config(format!(
                "shift {} does not divide window length {}",
                self.shift, self.window_length
            )));
        }
        if self.fft_size < self.window_length {
            return Err(Error::Config(format!(
                "fft size {} shorter than window {}",
                self.fft_size, self.window_length
            )));
        }
        // constant overlap-add of analysis * synthesis
        let overlap: Vec<f64> = (0..self.shift)
            .map(|n| {
                (0..self.window_length / self.shift)
                    .map(|k| {
                        let w = self.window.sample(n + k * self.shift, self.window_length);
                        w * w
                    })
                    .sum()
            })
            .collect();
        let max = overlap.iter().cloned().fold(f64::MIN, f64::max);
        let min = overlap.iter().cloned().fold(f64::MAX, f64::min);
        if min <= 0.0 || (max - min) / max > 1e-9 {
            return Err(Error::Config(format!(
                "window pair is not COLA at shift {} (range {min}..{max})",
                self.shift
            )));
        }
        Ok(())
    }

    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn pad(&self) -> usize {
        self.window_length - self.shift
    }

    pub fn num_frames(&self, len: usize) -> usize {
        let padded = len + 2 * self.pad();
        if padded <= self.window_length {
            1
        } else {
            (padded - self.window_length).div_ceil(self.shift) + 1
        }
    }

    /// Original-sample span `[start, end)` of frame `t`; `start` may be negative.
    pub fn frame_span(&self, t: usize) -> (isize, isize) {
        let start = (t * self.shift) as isize - self.pad() as isize;
        (start, start + self.window_length as isize)
    }

    pub fn window<T: Real>(&self) -> Vec<T> {
        (0..self.window_length).map(|n| T::of(self.window.sample(n, self.window_length))).collect()
    }

    /// Overlap-add normalisation at padded sample index `q` for a transform of `total` frames.
    fn norm_at(&self, win: &[f64], q: usize, total: usize) -> f64 {
        let first = (q + 1).saturating_sub(self.window_length).div_ceil(self.shift);
        let last = (q / self.shift).min(total.saturating_sub(1));
        (first..=last)
            .filter(|&t| t * self.shift <= q && q < t * self.shift + self.window_length)
            .map(|t| {
                let w = win[q - t * self.shift];
                w * w
            })
            .sum()
    }
}

/// Complex STFT of a multi-channel signal, `frames x bins x channels`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrogramTensor<T> {
    pub values: Array3<Complex<T>>,
    pub config: StftConfig,
    pub sample_rate: u32,
}

impl<T: Real> SpectrogramTensor<T> {
    pub fn frames(&self) -> usize {
        self.values.dim().0
    }

    pub fn bins(&self) -> usize {
        self.values.dim().1
    }

    pub fn channels(&self) -> usize {
        self.values.dim().2
    }

    /// Single channel as `frames x bins`.
    pub fn channel(&self, d: usize) -> ArrayView2<'_, Complex<T>> {
        self.values.index_axis(Axis(2), d)
    }

    pub fn zeros_like(&self, channels: usize) -> Self {
        Self {
            values: Array3::zeros((self.frames(), self.bins(), channels)),
            config: self.config,
            sample_rate: self.sample_rate,
        }
    }
}

pub fn stft<T: Real>(wave: &WaveformBlock<T>, cfg: &StftConfig) -> Result<SpectrogramTensor<T>> {
    cfg.validate()?;
    if wave.is_empty() {
        return Err(Error::EmptyInput("stft input"));
    }
    if wave.samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("stft input"));
    }
    let len = wave.len();
    let frames = cfg.num_frames(len);
    let bins = cfg.bins();
    let n = cfg.fft_size;
    let win: Vec<T> = cfg.window();
    let fft = FftPlanner::<T>::new().plan_fft_forward(n);
    let pad = cfg.pad();

    let per_channel: Vec<Array2<Complex<T>>> = (0..wave.channels())
        .into_par_iter()
        .map(|d| {
            let x = wave.samples.row(d);
            let mut out = Array2::zeros((frames, bins));
            let mut buf = vec![Complex::new(T::zero(), T::zero()); n];
            let mut scratch = vec![Complex::new(T::zero(), T::zero()); fft.get_inplace_scratch_len()];
            for t in 0..frames {
                for (j, b) in buf.iter_mut().enumerate() {
                    let q = t * cfg.shift + j;
                    *b = if j < cfg.window_length && q >= pad && q - pad < len {
                        Complex::new(x[q - pad] * win[j], T::zero())
                    } else {
                        Complex::new(T::zero(), T::zero())
                    };
                }
                fft.process_with_scratch(&mut buf, &mut scratch);
                for f in 0..bins {
                    out[[t, f]] = buf[f];
                }
            }
            out
        })
        .collect();

    let mut values = Array3::zeros((frames, bins, wave.channels()));
    for (d, ch) in per_channel.into_iter().enumerate() {
        values.index_axis_mut(Axis(2), d).assign(&ch);
    }
    Ok(SpectrogramTensor { values, config: *cfg, sample_rate: wave.sample_rate })
}

/// Overlap-add synthesis of a contiguous run of frames.
///
/// `frames` holds frames `first..first + frames.nrows()` of a transform with
/// `total` frames. Returns the first original-sample index covered and the
/// synthesised samples; the result equals the corresponding slice of a full
/// `istft` of a spectrogram that is zero outside the run.
pub fn synthesize_frames<T: Real>(
    cfg: &StftConfig,
    frames: ArrayView2<'_, Complex<T>>,
    first: usize,
    total: usize,
) -> (isize, Vec<T>) {
    let n = cfg.fft_size;
    let count = frames.nrows();
    if count == 0 {
        return ((first * cfg.shift) as isize - cfg.pad() as isize, Vec::new());
    }
    let win: Vec<T> = cfg.window();
    let win64: Vec<f64> = cfg.window();
    let ifft = FftPlanner::<T>::new().plan_fft_inverse(n);
    let mut out = vec![T::zero(); (count - 1) * cfg.shift + cfg.window_length];
    let mut buf = vec![Complex::new(T::zero(), T::zero()); n];
    let mut scratch = vec![Complex::new(T::zero(), T::zero()); ifft.get_inplace_scratch_len()];
    let scale = T::one() / T::of_usize(n);
    let mut half = Vec::with_capacity(cfg.bins());
    for (i, row) in frames.outer_iter().enumerate() {
        half.clear();
        half.extend(row.iter().copied());
        hermitian_fill(&mut buf, &half, n);
        ifft.process_with_scratch(&mut buf, &mut scratch);
        let base = i * cfg.shift;
        for j in 0..cfg.window_length {
            out[base + j] += buf[j].re * scale * win[j];
        }
    }
    let origin = first * cfg.shift;
    for (p, v) in out.iter_mut().enumerate() {
        let norm = cfg.norm_at(&win64, origin + p, total);
        *v = if norm > 1e-12 { *v / T::of(norm) } else { T::zero() };
    }
    (origin as isize - cfg.pad() as isize, out)
}

fn hermitian_fill<T: Real>(buf: &mut [Complex<T>], half: &[Complex<T>], n: usize) {
    let bins = half.len();
    for (f, b) in buf.iter_mut().enumerate().take(bins) {
        *b = half[f];
    }
    buf[0].im = T::zero();
    if n % 2 == 0 {
        buf[n / 2].im = T::zero();
    }
    for f in 1..bins {
        if n - f >= bins {
            buf[n - f] = half[f].conj();
        }
    }
}

/// Inverse STFT, truncated (or zero-extended) to `target_length` samples.
pub fn istft<T: Real>(spec: &SpectrogramTensor<T>, target_length: usize) -> Result<WaveformBlock<T>> {
    let cfg = spec.config;
    cfg.validate()?;
    if spec.bins() != cfg.bins() {
        return Err(Error::Config(format!(
            "spectrogram has {} bins but fft size {} implies {}",
            spec.bins(),
            cfg.fft_size,
            cfg.bins()
        )));
    }
    let total = spec.frames();
    let channels: Vec<Vec<T>> = (0..spec.channels())
        .into_par_iter()
        .map(|d| {
            let (start, samples) = synthesize_frames(&cfg, spec.channel(d), 0, total);
            (0..target_length)
                .map(|l| {
                    let p = l as isize - start;
                    if p >= 0 && (p as usize) < samples.len() {
                        samples[p as usize]
                    } else {
                        T::zero()
                    }
                })
                .collect()
        })
        .collect();
    let mut out = Array2::zeros((spec.channels(), target_length));
    for (d, ch) in channels.into_iter().enumerate() {
        for (l, v) in ch.into_iter().enumerate() {
            out[[d, l]] = v;
        }
    }
    Ok(WaveformBlock { samples: out, sample_rate: spec.sample_rate })
}

/// Adjoint of single-channel `istft` with respect to the spectrum.
///
/// Given `dL/dx` for the reconstructed signal (length `grad.len()`), returns
/// `dL/dRe(Z) + i dL/dIm(Z)` for every frame and bin of a transform with
/// `frames` frames.
pub fn istft_adjoint<T: Real>(cfg: &StftConfig, grad: &[T], frames: usize) -> Array2<Complex<T>> {
    let n = cfg.fft_size;
    let bins = cfg.bins();
    let pad = cfg.pad();
    let win: Vec<T> = cfg.window();
    let win64: Vec<f64> = cfg.window();
    let fft = FftPlanner::<T>::new().plan_fft_forward(n);
    let mut out = Array2::zeros((frames, bins));
    let mut buf = vec![Complex::new(T::zero(), T::zero()); n];
    let mut scratch = vec![Complex::new(T::zero(), T::zero()); fft.get_inplace_scratch_len()];
    let inv_n = T::one() / T::of_usize(n);
    for t in 0..frames {
        for (j, b) in buf.iter_mut().enumerate() {
            let q = t * cfg.shift + j;
            *b = if j < cfg.window_length && q >= pad && q - pad < grad.len() {
                let norm = cfg.norm_at(&win64, q, frames);
                if norm > 1e-12 {
                    Complex::new(grad[q - pad] * win[j] / T::of(norm), T::zero())
                } else {
                    Complex::new(T::zero(), T::zero())
                }
            } else {
                Complex::new(T::zero(), T::zero())
            };
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for f in 0..bins {
            let edge = f == 0 || (n % 2 == 0 && f == n / 2);
            let c = if edge { inv_n } else { inv_n + inv_n };
            let mut g = buf[f] * c;
            if edge {
                g.im = T::zero();
            }
            out[[t, f]] = g;
        }
    }
    out
}
