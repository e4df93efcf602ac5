//! From time-frequency masks to frame activities and constant-activity segments.

mod morphology;
mod segments;

pub use morphology::{threshold_close, MinLengthPolicy, SegmentationParams};
pub use segments::{activity_to_segments, Segment};

use ndarray::{s, Array2, Array3, Axis, Zip};
use num_complex::Complex;

use crate::audio::SpectrogramTensor;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Added to the IRM denominator so silent bins give a zero mask.
pub const IRM_FLOOR: f64 = 1e-10;

/// Per-speaker time-frequency mask, `frames x bins x speakers`, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskTensor<T> {
    pub values: Array3<T>,
}

impl<T: Real> MaskTensor<T> {
    pub fn new(values: Array3<T>) -> Result<Self> {
        if values.iter().any(|&m| !m.is_finite() || m < T::zero() || m > T::one()) {
            return Err(Error::Format("mask values must be finite and in [0, 1]".into()));
        }
        Ok(Self { values })
    }

    pub fn frames(&self) -> usize {
        self.values.dim().0
    }

    pub fn bins(&self) -> usize {
        self.values.dim().1
    }

    pub fn speakers(&self) -> usize {
        self.values.dim().2
    }
}

/// Soft frame activity, `frames x speakers`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivityEstimate<T> {
    pub values: Array2<T>,
}

/// Hard frame activity, `frames x speakers`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryActivity {
    pub values: Array2<bool>,
}

impl BinaryActivity {
    pub fn zeros(frames: usize, speakers: usize) -> Self {
        Self { values: Array2::from_elem((frames, speakers), false) }
    }

    pub fn frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn speakers(&self) -> usize {
        self.values.ncols()
    }

    pub fn get(&self, t: usize, k: usize) -> bool {
        self.values[[t, k]]
    }

    /// Frames where `k` is the only active speaker.
    pub fn solo_frames(&self, k: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.frames()).filter(move |&t| {
            self.values[[t, k]] && self.values.row(t).iter().filter(|&&a| a).count() == 1
        })
    }

    pub fn from_segments(segments: &[Segment], frames: usize, speakers: usize) -> Self {
        let mut out = Self::zeros(frames, speakers);
        for s in segments {
            for t in s.start..s.end.min(frames) {
                out.values[[t, s.speaker]] = true;
            }
        }
        out
    }
}

/// Oracle ideal ratio mask from the speaker images at `ref_channel`.
///
/// The noise is whatever the mixture holds beyond the sum of the images.
pub fn oracle_irm<T: Real>(
    images: &[SpectrogramTensor<T>],
    mixture: &SpectrogramTensor<T>,
    ref_channel: usize,
) -> Result<MaskTensor<T>> {
    let (frames, bins, channels) = mixture.values.dim();
    if ref_channel >= channels {
        return Err(Error::Shape(format!("reference channel {ref_channel} of {channels}")));
    }
    if images.iter().any(|x| x.values.dim().0 != frames || x.values.dim().1 != bins || x.channels() <= ref_channel) {
        return Err(Error::Shape("image and mixture spectrograms disagree".into()));
    }
    let k = images.len();
    let floor = T::of(IRM_FLOOR);
    let mut values = Array3::zeros((frames, bins, k));
    for t in 0..frames {
        for f in 0..bins {
            let mut residual = mixture.values[[t, f, ref_channel]];
            let mut total = T::zero();
            for img in images {
                let x = img.values[[t, f, ref_channel]];
                residual -= x;
                total += x.norm();
            }
            let denom = total + residual.norm() + floor;
            for (j, img) in images.iter().enumerate() {
                values[[t, f, j]] = (img.values[[t, f, ref_channel]].norm() / denom).min(T::one());
            }
        }
    }
    Ok(MaskTensor { values })
}

/// Mean of the mask over frequency, accumulated in double precision.
pub fn mask_to_activity<T: Real>(mask: &MaskTensor<T>) -> ActivityEstimate<T> {
    let bins = mask.bins().max(1) as f64;
    let values = Array2::from_shape_fn((mask.frames(), mask.speakers()), |(t, k)| {
        T::of(mask.values.slice(s![t, .., k]).iter().map(|&v| v.to_f64_lossy()).sum::<f64>() / bins)
    });
    ActivityEstimate { values }
}

/// Element-wise median over per-channel masks; even counts average the middle pair.
pub fn channel_median_fusion<T: Real>(masks: &[MaskTensor<T>]) -> Result<MaskTensor<T>> {
    let first = masks.first().ok_or(Error::EmptyInput("channel masks"))?;
    let dim = first.values.dim();
    if masks.iter().any(|m| m.values.dim() != dim) {
        return Err(Error::Shape("channel masks differ in shape".into()));
    }
    let n = masks.len();
    let half = T::of(0.5);
    let mut values = Array3::zeros(dim);
    let mut buf = Vec::with_capacity(n);
    for ((t, f, k), out) in values.indexed_iter_mut() {
        buf.clear();
        buf.extend(masks.iter().map(|m| m.values[[t, f, k]]));
        buf.sort_by(|a, b| a.partial_cmp(b).expect("finite mask"));
        *out = if n % 2 == 1 { buf[n / 2] } else { (buf[n / 2 - 1] + buf[n / 2]) * half };
    }
    Ok(MaskTensor { values })
}

/// `m * Y[ref]` for speaker `k`, all frames.
pub fn mask_multiply<T: Real>(
    spec: &SpectrogramTensor<T>,
    mask: &MaskTensor<T>,
    k: usize,
    ref_channel: usize,
) -> Result<Array2<Complex<T>>> {
    if mask.frames() != spec.frames() || mask.bins() != spec.bins() || k >= mask.speakers() {
        return Err(Error::Shape("mask and spectrogram disagree".into()));
    }
    if ref_channel >= spec.channels() {
        return Err(Error::Shape(format!("reference channel {ref_channel} of {}", spec.channels())));
    }
    let mut out = spec.channel(ref_channel).to_owned();
    Zip::from(&mut out).and(mask.values.index_axis(Axis(2), k)).for_each(|y, &m| *y = *y * m);
    Ok(out)
}
