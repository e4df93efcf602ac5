use ndarray::{Array1, Array2, Axis};

use super::SpectrogramTensor;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Magnitudes (and mel energies) are clamped here before the logarithm.
pub const LOG_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureBlock {
    pub name: String,
    pub width: usize,
}

/// Frame-wise network input, `frames x dims`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor<T> {
    pub values: Array2<T>,
    pub layout: Vec<FeatureBlock>,
}

impl<T: Real> FeatureTensor<T> {
    pub fn frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn dims(&self) -> usize {
        self.values.ncols()
    }
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular HTK-style filterbank, `n_mels x bins`, spanning 0 Hz to Nyquist.
pub fn mel_filterbank<T: Real>(n_mels: usize, bins: usize, sample_rate: u32) -> Array2<T> {
    let nyquist = f64::from(sample_rate) / 2.0;
    let top = hz_to_mel(nyquist);
    let edges: Vec<f64> = (0..n_mels + 2).map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64)).collect();
    let bin_hz = |f: usize| nyquist * f as f64 / (bins - 1).max(1) as f64;
    Array2::from_shape_fn((n_mels, bins), |(m, f)| {
        let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        let hz = bin_hz(f);
        let w = if hz > lo && hz <= mid {
            (hz - lo) / (mid - lo)
        } else if hz > mid && hz < hi {
            (hi - hz) / (hi - mid)
        } else {
            0.0
        };
        T::of(w)
    })
}

/// Log-magnitude spectrogram stacked with log-mel energies of one channel.
pub fn log_features<T: Real>(spec: &SpectrogramTensor<T>, channel: usize, n_mels: usize) -> Result<FeatureTensor<T>> {
    if channel >= spec.channels() {
        return Err(Error::Shape(format!("channel {channel} of {}", spec.channels())));
    }
    let bins = spec.bins();
    let floor = T::of(LOG_FLOOR);
    let mag = spec.channel(channel).mapv(|c| c.norm());
    let fb = mel_filterbank::<T>(n_mels, bins, spec.sample_rate);
    let mel = mag.dot(&fb.t());
    let mut values = Array2::zeros((spec.frames(), bins + n_mels));
    for t in 0..spec.frames() {
        for f in 0..bins {
            values[[t, f]] = mag[[t, f]].max(floor).ln();
        }
        for m in 0..n_mels {
            values[[t, bins + m]] = mel[[t, m]].max(floor).ln();
        }
    }
    Ok(FeatureTensor {
        values,
        layout: vec![
            FeatureBlock { name: "log_spectrogram".into(), width: bins },
            FeatureBlock { name: "log_mel".into(), width: n_mels },
        ],
    })
}

/// Per-dimension mean and standard deviation of a feature set.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentStats<T> {
    pub mean: Array1<T>,
    pub std: Array1<T>,
}

/// Pooled statistics over all frames of all tensors (population variance).
pub fn compute_stats<T: Real>(features: &[&FeatureTensor<T>]) -> Result<MomentStats<T>> {
    let dims = features.first().ok_or(Error::EmptyInput("feature set"))?.dims();
    if features.iter().any(|f| f.dims() != dims) {
        return Err(Error::Shape("feature tensors differ in width".into()));
    }
    let count: usize = features.iter().map(|f| f.frames()).sum();
    if count == 0 {
        return Err(Error::EmptyInput("feature frames"));
    }
    let n = T::of_usize(count);
    let mut mean = Array1::<T>::zeros(dims);
    for f in features {
        mean += &f.values.sum_axis(Axis(0));
    }
    mean /= n;
    let mut var = Array1::<T>::zeros(dims);
    for f in features {
        for row in f.values.outer_iter() {
            for ((v, &x), &m) in var.iter_mut().zip(row.iter()).zip(mean.iter()) {
                *v += (x - m) * (x - m);
            }
        }
    }
    let std = (var / n).mapv(|v| v.sqrt());
    Ok(MomentStats { mean, std })
}

impl<T: Real> MomentStats<T> {
    /// Affine map taking features distributed as `self` onto `target`.
    pub fn moment_match(&self, features: &FeatureTensor<T>, target: &MomentStats<T>) -> Result<FeatureTensor<T>> {
        let dims = features.dims();
        if self.mean.len() != dims || target.mean.len() != dims {
            return Err(Error::Shape(format!("stats width vs features width {dims}")));
        }
        if let Some(i) = self.std.iter().position(|&s| !(s > T::zero())) {
            return Err(Error::ZeroVariance(i));
        }
        if let Some(i) = target.std.iter().position(|&s| !(s > T::zero())) {
            return Err(Error::ZeroVariance(i));
        }
        let mut values = features.values.clone();
        for mut row in values.outer_iter_mut() {
            for (i, x) in row.iter_mut().enumerate() {
                *x = (*x - self.mean[i]) / self.std[i] * target.std[i] + target.mean[i];
            }
        }
        Ok(FeatureTensor { values, layout: features.layout.clone() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::StftConfig;
    use ndarray::{array, Array3};
    use num_complex::Complex;

    fn constant_spec(value: f64, frames: usize) -> SpectrogramTensor<f64> {
        let cfg = StftConfig::default();
        SpectrogramTensor {
            values: Array3::from_elem((frames, cfg.bins(), 1), Complex::new(value, 0.0)),
            config: cfg,
            sample_rate: 16_000,
        }
    }

    #[test]
    fn width_is_bins_plus_mels() {
        let f = log_features(&constant_spec(1.0, 3), 0, 40).unwrap();
        assert_eq!(f.dims(), 553);
        assert_eq!(f.layout[0].width, 513);
        assert_eq!(f.layout[1].width, 40);
    }

    #[test]
    fn constant_magnitude_gives_identical_rows() {
        let f = log_features(&constant_spec(0.3, 5), 0, 40).unwrap();
        for t in 1..5 {
            assert_eq!(f.values.row(t), f.values.row(0));
        }
        assert!((f.values[[0, 7]] - 0.3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn silence_hits_the_floor() {
        let f = log_features(&constant_spec(0.0, 2), 0, 40).unwrap();
        assert!(f.values.iter().all(|v| v.is_finite()));
        assert!((f.values[[0, 0]] - LOG_FLOOR.ln()).abs() < 1e-12);
    }

    #[test]
    fn channel_out_of_range() {
        assert!(log_features(&constant_spec(1.0, 2), 1, 40).is_err());
    }

    #[test]
    fn moment_match_arithmetic() {
        let src = MomentStats { mean: array![0.0], std: array![1.0] };
        let tgt = MomentStats { mean: array![5.0], std: array![2.0] };
        let f = FeatureTensor { values: array![[1.0]], layout: vec![] };
        assert_eq!(src.moment_match(&f, &tgt).unwrap().values[[0, 0]], 7.0);
    }

    #[test]
    fn moment_match_hits_target_stats_and_inverts() {
        let f = FeatureTensor {
            values: array![[1.0f64, -2.0], [3.0, 0.5], [2.0, 4.0], [-1.0, 1.0]],
            layout: vec![],
        };
        let src = compute_stats(&[&f]).unwrap();
        let tgt = MomentStats { mean: array![10.0, -3.0], std: array![0.5, 7.0] };
        let g = src.moment_match(&f, &tgt).unwrap();
        let got = compute_stats(&[&g]).unwrap();
        for i in 0..2 {
            assert!((got.mean[i] - tgt.mean[i]).abs() < 1e-12);
            assert!((got.std[i] - tgt.std[i]).abs() < 1e-12);
        }
        let back = tgt.moment_match(&g, &src).unwrap();
        for (a, b) in back.values.iter().zip(f.values.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        let same = src.moment_match(&f, &src).unwrap();
        for (a, b) in same.values.iter().zip(f.values.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_variance_rejected() {
        let f = FeatureTensor { values: array![[1.0, 2.0], [1.0, 3.0]], layout: vec![] };
        let src = compute_stats(&[&f]).unwrap();
        assert!(matches!(src.moment_match(&f, &src), Err(Error::ZeroVariance(0))));
    }
}
