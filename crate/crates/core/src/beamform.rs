//! Mask-based MVDR beamforming in the Souden formulation.
//!
//! Spatial covariances are estimated per segment from mask-weighted outer
//! products of the multi-channel STFT; the beamformer needs no steering
//! vector. Extraction can be plain beamforming, beamforming followed by a
//! floored mask, or (single channel) mask multiplication.

use ndarray::{Array2, ArrayView2, Axis};
use num_complex::Complex;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::SpectrogramTensor;
use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix};
use crate::mask::{MaskTensor, Segment};
use crate::scalar::Real;

pub use crate::mask::mask_multiply;

/// Trace magnitudes below this make the Souden solution meaningless.
pub const TRACE_FLOOR: f64 = 1e-12;
/// Diagonal loading of the distortion covariance, relative to its mean eigenvalue.
pub const DIAGONAL_LOADING: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractionParams {
    pub epsilon: f64,
    pub mask_floor: f64,
    pub ref_channel: usize,
}

impl Default for ExtractionParams {
    fn default() -> Self {
        Self { epsilon: 1e-4, mask_floor: 0.5, ref_channel: 0 }
    }
}

impl ExtractionParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!("epsilon {} must be positive", self.epsilon)));
        }
        if !(0.0..=1.0).contains(&self.mask_floor) {
            return Err(Error::Config(format!("mask floor {} outside [0, 1]", self.mask_floor)));
        }
        Ok(())
    }
}

/// Target and distortion covariance per frequency bin for one segment.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariancePair<T> {
    pub phi_xx: Vec<CMatrix<T>>,
    pub phi_dd: Vec<CMatrix<T>>,
    pub frames: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamWeights<T> {
    /// `bins x channels`
    pub weights: Array2<Complex<T>>,
    pub ref_channel: usize,
    /// Bins that fell back to selecting the reference channel.
    pub passthrough: Vec<bool>,
}

fn check_segment<T: Real>(spec: &SpectrogramTensor<T>, seg: &Segment) -> Result<()> {
    if seg.is_empty() {
        return Err(Error::EmptySegment { start: seg.start, end: seg.end });
    }
    if seg.end > spec.frames() {
        return Err(Error::Shape(format!("segment end {} beyond {} frames", seg.end, spec.frames())));
    }
    Ok(())
}

/// Covariances from explicit per-frame target and distortion weights
/// (`frames x bins`, indexed by absolute frame).
pub fn estimate_covariances_weighted<T: Real>(
    spec: &SpectrogramTensor<T>,
    target: ArrayView2<'_, T>,
    distortion: ArrayView2<'_, T>,
    seg: &Segment,
) -> Result<CovariancePair<T>> {
    check_segment(spec, seg)?;
    let d = spec.channels();
    let n = T::of_usize(seg.len());
    let (phi_xx, phi_dd): (Vec<_>, Vec<_>) = (0..spec.bins())
        .into_par_iter()
        .map(|f| {
            let mut xx = CMatrix::zeros((d, d));
            let mut dd = CMatrix::zeros((d, d));
            for t in seg.start..seg.end {
                let y = spec.values.slice(ndarray::s![t, f, ..]);
                linalg::accumulate_outer(&mut xx, y, target[[t, f]]);
                linalg::accumulate_outer(&mut dd, y, distortion[[t, f]]);
            }
            xx.mapv_inplace(|c| c / n);
            dd.mapv_inplace(|c| c / n);
            linalg::hermitize(&mut xx);
            linalg::hermitize(&mut dd);
            (xx, dd)
        })
        .unzip();
    Ok(CovariancePair { phi_xx, phi_dd, frames: seg.len() })
}

/// Target covariance weighted by the segment speaker's mask, distortion by
/// the floored sum of all other speakers' masks.
pub fn estimate_covariances<T: Real>(
    spec: &SpectrogramTensor<T>,
    mask: &MaskTensor<T>,
    seg: &Segment,
    params: &ExtractionParams,
) -> Result<CovariancePair<T>> {
    if mask.frames() != spec.frames() || mask.bins() != spec.bins() || seg.speaker >= mask.speakers() {
        return Err(Error::Shape("mask and spectrogram disagree".into()));
    }
    let eps = T::of(params.epsilon);
    let target = mask.values.index_axis(Axis(2), seg.speaker);
    let total = mask.values.sum_axis(Axis(2));
    let distortion = Array2::from_shape_fn(total.raw_dim(), |(t, f)| (total[[t, f]] - target[[t, f]]).max(eps));
    estimate_covariances_weighted(spec, target, distortion.view(), seg)
}

/// `w = (Phi_dd^-1 Phi_xx / tr(Phi_dd^-1 Phi_xx)) u_ref` per bin.
pub fn mvdr_souden<T: Real>(cov: &CovariancePair<T>, ref_channel: usize) -> Result<BeamWeights<T>> {
    let bins = cov.phi_xx.len();
    let d = cov.phi_xx.first().map_or(0, |m| m.nrows());
    if ref_channel >= d {
        return Err(Error::Shape(format!("reference channel {ref_channel} of {d}")));
    }
    let per_bin: Vec<(Vec<Complex<T>>, bool)> = (0..bins)
        .into_par_iter()
        .map(|f| {
            let mut dd = cov.phi_dd[f].clone();
            let load = linalg::trace(&dd).re / T::of_usize(d) * T::of(DIAGONAL_LOADING);
            linalg::add_to_diagonal(&mut dd, load);
            let select = || {
                let mut u = vec![Complex::new(T::zero(), T::zero()); d];
                u[ref_channel] = Complex::new(T::one(), T::zero());
                (u, true)
            };
            let Some(num) = linalg::hermitian_solve(&dd, &cov.phi_xx[f]) else {
                return select();
            };
            let tr = linalg::trace(&num);
            if !(tr.norm() >= T::of(TRACE_FLOOR)) || !tr.norm().is_finite() {
                return select();
            }
            let w: Vec<Complex<T>> = (0..d).map(|i| num[[i, ref_channel]] / tr).collect();
            if w.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
                return select();
            }
            (w, false)
        })
        .collect();
    let mut weights = Array2::zeros((bins, d));
    let mut passthrough = Vec::with_capacity(bins);
    for (f, (w, flag)) in per_bin.into_iter().enumerate() {
        for (i, c) in w.into_iter().enumerate() {
            weights[[f, i]] = c;
        }
        passthrough.push(flag);
    }
    Ok(BeamWeights { weights, ref_channel, passthrough })
}

/// `w^H Y` over the segment frames, `segment frames x bins`.
pub fn apply_beamformer<T: Real>(
    weights: &BeamWeights<T>,
    spec: &SpectrogramTensor<T>,
    seg: &Segment,
) -> Result<Array2<Complex<T>>> {
    check_segment(spec, seg)?;
    if weights.weights.dim() != (spec.bins(), spec.channels()) {
        return Err(Error::Shape("beamformer and spectrogram disagree".into()));
    }
    let mut out = Array2::zeros((seg.len(), spec.bins()));
    for (i, t) in (seg.start..seg.end).enumerate() {
        for f in 0..spec.bins() {
            let mut acc = Complex::new(T::zero(), T::zero());
            for d in 0..spec.channels() {
                acc += weights.weights[[f, d]].conj() * spec.values[[t, f, d]];
            }
            out[[i, f]] = acc;
        }
    }
    Ok(out)
}

/// Beamformer output scaled by `max(m, mask_floor)` of the segment speaker.
pub fn extract_with_mask_floor<T: Real>(
    weights: &BeamWeights<T>,
    spec: &SpectrogramTensor<T>,
    mask: &MaskTensor<T>,
    seg: &Segment,
    params: &ExtractionParams,
) -> Result<Array2<Complex<T>>> {
    params.validate()?;
    if mask.frames() != spec.frames() || mask.bins() != spec.bins() || seg.speaker >= mask.speakers() {
        return Err(Error::Shape("mask and spectrogram disagree".into()));
    }
    let floor = T::of(params.mask_floor);
    let mut out = apply_beamformer(weights, spec, seg)?;
    for (i, t) in (seg.start..seg.end).enumerate() {
        for f in 0..spec.bins() {
            out[[i, f]] = out[[i, f]] * mask.values[[t, f, seg.speaker]].max(floor);
        }
    }
    Ok(out)
}
