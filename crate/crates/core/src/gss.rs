//! Guided source separation: a complex angular central Gaussian mixture per
//! frequency whose time-varying class weights are gated by speaker activity.

use ndarray::{s, Array2, Array3, ArrayView2, ArrayView3, Axis};
use num_complex::Complex;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::SpectrogramTensor;
use crate::error::{Error, Result};
use crate::linalg::{add_to_diagonal, cholesky, hermitize, log_det, trace, CMatrix};
use crate::mask::{BinaryActivity, MaskTensor, Segment};
use crate::scalar::Real;

pub const SHAPE_LOADING: f64 = 1e-8;
pub const NOISE_FLOOR: f64 = 0.1;
pub const EMPTY_CLASS_MASS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitMode {
    /// Posteriors from frame activity only.
    TInit,
    /// Posteriors from the time-frequency mask.
    #[default]
    TfInit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GssConfig {
    pub context_seconds: f64,
    pub guided_steps: usize,
    pub nonguided_steps: usize,
    pub init_mode: InitMode,
    pub include_noise_class: bool,
    /// Stop early once the relative log-likelihood change falls below this.
    pub convergence_tol: Option<f64>,
}

impl Default for GssConfig {
    fn default() -> Self {
        Self {
            context_seconds: 15.0,
            guided_steps: 20,
            nonguided_steps: 1,
            init_mode: InitMode::TfInit,
            include_noise_class: true,
            convergence_tol: None,
        }
    }
}

impl GssConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.context_seconds >= 0.0 && self.context_seconds.is_finite()) {
            return Err(Error::Config(format!("context {} s must be non-negative", self.context_seconds)));
        }
        if self.convergence_tol.is_some_and(|t| !(t >= 0.0)) {
            return Err(Error::Config("convergence tolerance must be non-negative".into()));
        }
        Ok(())
    }

    /// Context length in frames (rounded down).
    pub fn context_frames(&self, shift: usize, sample_rate: u32) -> usize {
        (self.context_seconds * f64::from(sample_rate) / shift as f64).floor() as usize
    }
}

/// `[start - context, end + context)` clipped to `[0, frames)`.
pub fn context_expand(seg: &Segment, context: usize, frames: usize) -> (usize, usize) {
    (seg.start.saturating_sub(context), (seg.end + context).min(frames))
}

/// Initial posteriors, `frames x bins x classes`, normalised per bin.
///
/// `guide` is `frames x classes`; `mask` (TF-init) is `frames x bins x classes`
/// and its entries for the noise class are ignored in favour of the floor.
pub fn init_posteriors<T: Real>(
    guide: ArrayView2<'_, bool>,
    mask: Option<ArrayView3<'_, T>>,
    noise: Option<usize>,
    mode: InitMode,
    bins: usize,
) -> Result<Array3<T>> {
    let (frames, classes) = guide.dim();
    let mut gamma = Array3::<T>::zeros((frames, bins, classes));
    if mode == InitMode::TfInit {
        let m = mask.ok_or_else(|| Error::Config("TF-init needs an initial mask".into()))?;
        if m.dim() != (frames, bins, classes) {
            return Err(Error::Shape(format!("init mask {:?} vs {:?}", m.dim(), (frames, bins, classes))));
        }
    }
    for t in 0..frames {
        for f in 0..bins {
            let mut row = gamma.slice_mut(s![t, f, ..]);
            for c in 0..classes {
                if !guide[[t, c]] {
                    continue;
                }
                row[c] = match (mode, mask) {
                    (InitMode::TfInit, _) if Some(c) == noise => T::of(NOISE_FLOOR),
                    (InitMode::TfInit, Some(m)) => m[[t, f, c]],
                    _ => T::one(),
                };
            }
            let sum: T = row.iter().copied().sum();
            if sum > T::zero() {
                row.mapv_inplace(|x| x / sum);
            } else if let Some(n) = noise {
                row[n] = T::one();
            } else {
                row.fill(T::one() / T::of_usize(classes));
            }
        }
    }
    Ok(gamma)
}

/// `frames x bins x rest` array stored bin-major, so that walking the frames
/// of one bin is contiguous.
fn bin_major<A: Clone + num_traits::Zero>(frames: usize, bins: usize, rest: usize) -> Array3<A> {
    Array3::zeros((bins, frames, rest)).permuted_axes([1, 0, 2])
}

/// Direction-normalised observations, `frames x bins x channels`, stored bin-major.
pub struct Observations<T> {
    pub unit: Array3<Complex<T>>,
    /// False where the observation vector is zero.
    pub valid: Array2<bool>,
}

impl<T: Real> Observations<T> {
    pub fn new(spec: &SpectrogramTensor<T>, start: usize, end: usize) -> Self {
        let source = spec.values.slice(s![start..end, .., ..]);
        let (frames, bins, d) = source.dim();
        let mut unit = bin_major(frames, bins, d);
        unit.assign(&source);
        let mut valid = Array2::from_elem((bins, frames), false).reversed_axes();
        let tiny = T::min_positive_value().sqrt();
        for f in 0..bins {
            for t in 0..frames {
                let mut y = unit.slice_mut(s![t, f, ..]);
                let norm = y.iter().map(|z| z.norm_sqr()).sum::<T>().sqrt();
                if norm > tiny {
                    y.mapv_inplace(|z| z / norm);
                    valid[[t, f]] = true;
                } else {
                    y.fill(Complex::new(T::zero(), T::zero()));
                }
            }
        }
        Self { unit, valid }
    }

    pub fn frames(&self) -> usize {
        self.unit.dim().0
    }

    pub fn bins(&self) -> usize {
        self.unit.dim().1
    }

    pub fn channels(&self) -> usize {
        self.unit.dim().2
    }
}

/// Spatial mixture state over one (expanded) segment.
#[derive(Debug, Clone)]
pub struct SmmState<T> {
    /// `frames x classes` activity gate.
    pub guide: Array2<bool>,
    /// `frames x bins x classes`.
    pub gamma: Array3<T>,
    /// Shape matrices indexed `[bin][class]`.
    pub shapes: Vec<Vec<CMatrix<T>>>,
    /// `frames x classes` mixture weights shared by all bins.
    pub weights: Array2<T>,
    /// `bins x classes`: class had no mass in the last M-step.
    pub empty: Array2<bool>,
    /// `frames x bins x classes` quadratic forms under `shapes`, once known.
    quad: Option<Array3<T>>,
}

impl<T: Real> SmmState<T> {
    pub fn new(guide: Array2<bool>, gamma: Array3<T>, channels: usize) -> Self {
        let (frames, bins, classes) = gamma.dim();
        let eye = CMatrix::from_diag_elem(channels, Complex::new(T::one(), T::zero()));
        let mut stored = bin_major(frames, bins, classes);
        stored.assign(&gamma);
        Self {
            guide,
            gamma: stored,
            shapes: vec![vec![eye; classes]; bins],
            weights: Array2::from_elem((frames, classes), T::one() / T::of_usize(classes)),
            empty: Array2::from_elem((bins, classes), false),
            quad: None,
        }
    }

    pub fn classes(&self) -> usize {
        self.gamma.dim().2
    }
}

/// Cholesky factor of a shape matrix, packed row-major for quadratic forms.
struct Factor<T> {
    d: usize,
    lower: Vec<Complex<T>>,
    inv_diag: Vec<T>,
    log_det: f64,
}

impl<T: Real> Factor<T> {
    fn new(b: &CMatrix<T>) -> Option<Self> {
        let l = cholesky(b)?;
        let d = l.nrows();
        Some(Self {
            d,
            lower: l.iter().copied().collect(),
            inv_diag: l.diag().iter().map(|z| T::one() / z.re).collect(),
            log_det: log_det(&l).to_f64_lossy(),
        })
    }

    /// Factor of `b`, diagonally loaded when `b` itself is not positive definite.
    fn robust(b: &CMatrix<T>) -> Self {
        Self::new(b).unwrap_or_else(|| {
            let mut loaded = b.clone();
            add_to_diagonal(&mut loaded, T::of(1e-6));
            Self::new(&loaded).expect("loaded shape matrix is positive definite")
        })
    }

    /// `y^H B^-1 y = |L^-1 y|^2` by forward substitution into `z`.
    fn quad(&self, y: &[Complex<T>], z: &mut [Complex<T>]) -> T {
        let d = self.d;
        let mut q = T::zero();
        for i in 0..d {
            let row = &self.lower[i * d..i * d + i];
            let mut s = y[i];
            for (l, zk) in row.iter().zip(z.iter()) {
                s -= *l * *zk;
            }
            let zi = s * self.inv_diag[i];
            z[i] = zi;
            q += zi.norm_sqr();
        }
        q
    }
}

/// Observations of one bin: `frames x channels` unit vectors and validity.
struct BinObs<'a, T> {
    unit: &'a [Complex<T>],
    valid: &'a [bool],
    d: usize,
}

impl<'a, T> BinObs<'a, T> {
    fn of(obs: &'a Observations<T>, f: usize) -> Self {
        Self {
            unit: obs.unit.bin_slice(f),
            valid: obs.valid.slice(s![.., f]).to_slice().expect("validity is stored bin-major"),
            d: obs.unit.dim().2,
        }
    }

    fn frames(&self) -> usize {
        self.valid.len()
    }

    fn y(&self, t: usize) -> &'a [Complex<T>] {
        &self.unit[t * self.d..(t + 1) * self.d]
    }
}

trait BinSlice<A> {
    fn bin_slice(&self, f: usize) -> &[A];
}

impl<A> BinSlice<A> for Array3<A> {
    /// Frames of bin `f` of a bin-major array as one contiguous slice.
    fn bin_slice(&self, f: usize) -> &[A] {
        let (frames, _, rest) = self.dim();
        let strides = self.strides();
        debug_assert!(strides[2] == 1 && strides[0] == rest as isize);
        let offset = f * strides[1] as usize;
        &self.as_slice_memory_order().expect("bin-major storage is contiguous")[offset..offset + frames * rest]
    }
}

/// Shape update of one bin; returns the new shapes and the empty-class flags.
///
/// `gamma` and `quad` are this bin's `frames x classes` posteriors and
/// `y^H B^-1 y` under the current shapes; without `quad` the forms are
/// computed here.
fn m_step_bin<T: Real>(obs: &BinObs<'_, T>, gamma: &[T], old: &[CMatrix<T>], quad: Option<&[T]>) -> (Vec<CMatrix<T>>, Vec<bool>) {
    let d = obs.d;
    let classes = old.len();
    let eye = CMatrix::from_diag_elem(d, Complex::new(T::one(), T::zero()));
    let mut shapes = Vec::with_capacity(classes);
    let mut empty = Vec::with_capacity(classes);
    let mut z = vec![Complex::new(T::zero(), T::zero()); d];
    let mut acc = vec![Complex::new(T::zero(), T::zero()); d * d];
    for (c, b_old) in old.iter().enumerate() {
        let factor = if quad.is_none() { Factor::new(b_old) } else { None };
        acc.fill(Complex::new(T::zero(), T::zero()));
        let mut mass = T::zero();
        for t in 0..obs.frames() {
            let g = gamma[t * classes + c];
            if g == T::zero() || !obs.valid[t] {
                continue;
            }
            let y = obs.y(t);
            let q = match (quad, &factor) {
                (Some(cached), _) => cached[t * classes + c],
                (None, Some(l)) => l.quad(y, &mut z),
                (None, None) => T::one(),
            };
            let w = g / q.max(T::epsilon());
            for (i, row) in acc.chunks_exact_mut(d).enumerate() {
                let yi = y[i] * w;
                for (a, yj) in row.iter_mut().zip(y) {
                    *a += yi * yj.conj();
                }
            }
            mass += g;
        }
        if mass.to_f64_lossy() < EMPTY_CLASS_MASS {
            shapes.push(eye.clone());
            empty.push(true);
            continue;
        }
        let mut b = CMatrix::from_shape_vec((d, d), acc.clone()).expect("d x d accumulator");
        hermitize(&mut b);
        let tr = trace(&b).re;
        if tr > T::zero() {
            b.mapv_inplace(|z| z * (T::of_usize(d) / tr));
        } else {
            b = eye.clone();
        }
        add_to_diagonal(&mut b, T::of(SHAPE_LOADING));
        shapes.push(b);
        empty.push(false);
    }
    (shapes, empty)
}

/// E-step of one bin: posteriors and quadratic forms, both `frames x classes`
/// flattened, and the bin's log-likelihood. Classes with a `-inf` prior get
/// zero posterior without evaluating their density.
fn e_step_bin<T: Real>(obs: &BinObs<'_, T>, shapes: &[CMatrix<T>], prior: &[f64]) -> (Vec<T>, Vec<T>, f64) {
    let d = obs.d;
    let classes = shapes.len();
    let frames = obs.frames();
    let log_norm = ln_factorial(d - 1) - d as f64 * std::f64::consts::PI.ln();
    let factors: Vec<Factor<T>> = shapes.iter().map(Factor::robust).collect();
    let mut z = vec![Complex::new(T::zero(), T::zero()); d];
    let mut post = vec![T::zero(); frames * classes];
    let mut quad = vec![T::one(); frames * classes];
    let mut joint = vec![0.0f64; classes];
    let mut ll = 0.0;
    for t in 0..frames {
        let row = t * classes;
        let mut mx = f64::NEG_INFINITY;
        for (c, l) in factors.iter().enumerate() {
            let p = prior[row + c];
            joint[c] = if p == f64::NEG_INFINITY {
                p
            } else if obs.valid[t] {
                let q = l.quad(obs.y(t), &mut z);
                quad[row + c] = q;
                p + log_norm - l.log_det - d as f64 * q.to_f64_lossy().max(f64::MIN_POSITIVE).ln()
            } else {
                p
            };
            mx = mx.max(joint[c]);
        }
        let mut sum = 0.0;
        for j in joint.iter_mut() {
            *j = (*j - mx).exp();
            sum += *j;
        }
        ll += mx + sum.ln();
        for (c, j) in joint.iter().enumerate() {
            post[row + c] = T::of(j / sum);
        }
    }
    (post, quad, ll)
}

fn ln_factorial(n: usize) -> f64 {
    (1..=n).map(|k| (k as f64).ln()).sum()
}

/// One M-step followed by one E-step; returns the log-likelihood of the
/// updated model. With `guided`, classes outside the guide get zero prior.
pub fn em_step<T: Real>(state: &mut SmmState<T>, obs: &Observations<T>, guided: bool) -> Result<f64> {
    let (frames, bins, classes) = state.gamma.dim();
    if obs.frames() != frames || obs.bins() != bins {
        return Err(Error::Shape(format!("observations {:?} vs state {:?}", (obs.frames(), obs.bins()), (frames, bins))));
    }
    let gamma = &state.gamma;
    let quad = state.quad.take();
    let updated: Vec<(Vec<CMatrix<T>>, Vec<bool>)> = (0..bins)
        .into_par_iter()
        .map(|f| {
            let cached = quad.as_ref().map(|q| q.bin_slice(f));
            m_step_bin(&BinObs::of(obs, f), gamma.bin_slice(f), &state.shapes[f], cached)
        })
        .collect();
    for (f, (shapes, empty)) in updated.into_iter().enumerate() {
        state.shapes[f] = shapes;
        for (c, e) in empty.into_iter().enumerate() {
            state.empty[[f, c]] = e;
        }
    }
    state.weights = state.gamma.mean_axis(Axis(1)).expect("at least one bin");

    let mut prior = Array2::<f64>::zeros((frames, classes));
    for t in 0..frames {
        for c in 0..classes {
            let gate = !guided || state.guide[[t, c]];
            let w = state.weights[[t, c]].to_f64_lossy();
            prior[[t, c]] = if gate && w > 0.0 { w.ln() } else { f64::NEG_INFINITY };
        }
        if prior.row(t).iter().all(|p| p.is_infinite()) {
            return Err(Error::Diverged { step: 0, detail: format!("frame {t} has no admissible class") });
        }
    }
    let prior = prior.as_slice().expect("fresh array is contiguous");
    let shapes = &state.shapes;
    let per_bin: Vec<(Vec<T>, Vec<T>, f64)> =
        (0..bins).into_par_iter().map(|f| e_step_bin(&BinObs::of(obs, f), &shapes[f], prior)).collect();
    let mut ll = 0.0;
    let mut quad = quad.unwrap_or_else(|| bin_major(frames, bins, classes));
    for (f, (post, q, l)) in per_bin.into_iter().enumerate() {
        state.gamma.slice_mut(s![.., f, ..]).assign(&ArrayView2::from_shape((frames, classes), &post).expect("frames x classes"));
        quad.slice_mut(s![.., f, ..]).assign(&ArrayView2::from_shape((frames, classes), &q).expect("frames x classes"));
        ll += l;
    }
    state.quad = Some(quad);
    if !ll.is_finite() {
        return Err(Error::Diverged { step: 0, detail: "non-finite log-likelihood".into() });
    }
    Ok(ll)
}

/// Refined posteriors of every class over the segment frames.
#[derive(Debug, Clone)]
pub struct GssOutput<T> {
    /// Speaker index per class; `None` is the noise class.
    pub classes: Vec<Option<usize>>,
    /// `segment frames x bins x classes`.
    pub posteriors: Array3<T>,
    pub log_likelihoods: Vec<f64>,
    pub guided_steps_run: usize,
}

impl<T: Real> GssOutput<T> {
    pub fn class_of(&self, speaker: usize) -> Option<usize> {
        self.classes.iter().position(|&c| c == Some(speaker))
    }

    /// Posterior of `speaker`, zero when the speaker was not modelled.
    pub fn speaker_mask(&self, speaker: usize) -> Array2<T> {
        let (frames, bins, _) = self.posteriors.dim();
        match self.class_of(speaker) {
            Some(c) => self.posteriors.slice(s![.., .., c]).to_owned(),
            None => Array2::zeros((frames, bins)),
        }
    }

    /// Speaker posteriors laid out as a `frames x bins x speakers` mask.
    pub fn to_mask_tensor(&self, speakers: usize) -> Result<MaskTensor<T>> {
        let (frames, bins, _) = self.posteriors.dim();
        let mut values = Array3::zeros((frames, bins, speakers));
        for k in 0..speakers {
            values.slice_mut(s![.., .., k]).assign(&self.speaker_mask(k));
        }
        MaskTensor::new(values.mapv(|x: T| x.max(T::zero()).min(T::one())))
    }
}

/// Runs guided EM on the context-expanded segment and returns posteriors
/// restricted to the segment itself.
pub fn run_gss<T: Real>(
    spec: &SpectrogramTensor<T>,
    guide: &BinaryActivity,
    init_mask: Option<&MaskTensor<T>>,
    seg: &Segment,
    config: &GssConfig,
) -> Result<GssOutput<T>> {
    config.validate()?;
    let total = spec.frames();
    if guide.frames() < total {
        return Err(Error::Shape(format!("guide has {} frames, spectrogram {}", guide.frames(), total)));
    }
    if seg.is_empty() || seg.end > total {
        return Err(Error::EmptySegment { start: seg.start, end: seg.end });
    }
    let context = config.context_frames(spec.config.shift, spec.sample_rate);
    let (a, b) = context_expand(seg, context, total);
    let frames = b - a;
    let mut classes: Vec<Option<usize>> = (0..guide.speakers())
        .filter(|&k| k == seg.speaker || (a..b).any(|t| guide.get(t, k)))
        .map(Some)
        .collect();
    if config.include_noise_class {
        classes.push(None);
    }
    let noise = config.include_noise_class.then_some(classes.len() - 1);
    let gate = Array2::from_shape_fn((frames, classes.len()), |(t, c)| match classes[c] {
        None => true,
        Some(k) => guide.get(a + t, k) || (k == seg.speaker && (seg.start..seg.end).contains(&(a + t))),
    });
    let bins = spec.bins();
    let mask_view = match (config.init_mode, init_mask) {
        (InitMode::TfInit, Some(m)) => {
            if m.frames() < total || m.bins() != bins {
                return Err(Error::Shape("init mask does not cover the spectrogram".into()));
            }
            Some(Array3::from_shape_fn((frames, bins, classes.len()), |(t, f, c)| {
                classes[c].map_or(T::zero(), |k| m.values[[a + t, f, k]])
            }))
        }
        _ => None,
    };
    let gamma = init_posteriors(gate.view(), mask_view.as_ref().map(|m| m.view()), noise, config.init_mode, bins)?;
    let obs = Observations::new(spec, a, b);
    let mut state = SmmState::new(gate, gamma, spec.channels());
    let mut log_likelihoods = Vec::new();
    let mut guided_steps_run = 0;
    for step in 0..config.guided_steps {
        let ll = em_step(&mut state, &obs, true).map_err(|e| with_step(e, step))?;
        guided_steps_run += 1;
        let converged = match (config.convergence_tol, log_likelihoods.last()) {
            (Some(tol), Some(&prev)) => ((ll - prev) / f64::abs(prev).max(1.0)).abs() < tol,
            _ => false,
        };
        log_likelihoods.push(ll);
        if converged {
            break;
        }
    }
    for step in 0..config.nonguided_steps {
        let ll = em_step(&mut state, &obs, false).map_err(|e| with_step(e, guided_steps_run + step))?;
        log_likelihoods.push(ll);
    }
    let posteriors = state.gamma.slice(s![seg.start - a..seg.end - a, .., ..]).as_standard_layout().into_owned();
    Ok(GssOutput { classes, posteriors, log_likelihoods, guided_steps_run })
}

fn with_step(e: Error, step: usize) -> Error {
    match e {
        Error::Diverged { detail, .. } => Error::Diverged { step, detail },
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::{stft, StftConfig};
    use crate::mask::oracle_irm;
    use crate::synth::{gen_meeting, frame_activity, MeetingSpec, UtteranceCorpus};
    use ndarray::{array, Array1};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn seg(speaker: usize, start: usize, end: usize) -> Segment {
        Segment { id: 0, speaker, start, end }
    }

    #[test]
    fn context_expansion() {
        assert_eq!(context_expand(&seg(0, 1000, 2000), 0, 5000), (1000, 2000));
        assert_eq!(context_expand(&seg(0, 1000, 2000), 937, 5000), (63, 2937));
        assert_eq!(context_expand(&seg(0, 10, 20), 937, 500), (0, 500));
        let cfg = GssConfig::default();
        assert_eq!(cfg.context_frames(256, 16_000), 937);
    }

    #[test]
    fn t_init_is_uniform_over_active_classes() {
        let guide = array![[true, false, true]];
        let g = init_posteriors::<f64>(guide.view(), None, Some(2), InitMode::TInit, 3).unwrap();
        for f in 0..3 {
            assert_eq!(g.slice(s![0, f, ..]).to_vec(), vec![0.5, 0.0, 0.5]);
        }
    }

    #[test]
    fn tf_init_adds_noise_floor() {
        let guide = array![[true, true, true]];
        let mask = Array3::from_shape_vec((1, 1, 3), vec![0.8f64, 0.0, 0.7]).unwrap();
        let g = init_posteriors(guide.view(), Some(mask.view()), Some(2), InitMode::TfInit, 1).unwrap();
        let want = [0.8f64 / 0.9, 0.0, 0.1 / 0.9];
        for c in 0..3 {
            assert!((g[[0, 0, c]] - want[c]).abs() < 1e-15);
        }
        assert!(init_posteriors::<f64>(guide.view(), None, Some(2), InitMode::TfInit, 1).is_err());
    }

    #[test]
    fn zero_rows_fall_back_to_noise() {
        let guide = array![[false, true]];
        let mask = Array3::zeros((1, 2, 2));
        let g = init_posteriors::<f64>(guide.view(), Some(mask.view()), None, InitMode::TfInit, 2).unwrap();
        assert_eq!(g.slice(s![0, 0, ..]).to_vec(), vec![0.5, 0.5]);
        let guide = array![[false, false]];
        let g = init_posteriors::<f64>(guide.view(), None, Some(1), InitMode::TInit, 1).unwrap();
        assert_eq!(g.slice(s![0, 0, ..]).to_vec(), vec![0.0, 1.0]);
    }

    fn random_spec(frames: usize, bins: usize, d: usize, seed: u64) -> SpectrogramTensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = Array3::from_shape_fn((frames, bins, d), |_| {
            Complex::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        });
        SpectrogramTensor { values, config: StftConfig::new(2 * (bins - 1), (bins - 1) / 2).unwrap(), sample_rate: 16_000 }
    }

    #[test]
    fn single_class_posterior_is_one() {
        let spec = random_spec(30, 5, 3, 1);
        let obs = Observations::new(&spec, 0, 30);
        let guide = Array2::from_elem((30, 1), true);
        let gamma = init_posteriors::<f64>(guide.view(), None, None, InitMode::TInit, 5).unwrap();
        let mut state = SmmState::new(guide, gamma, 3);
        for guided in [true, false] {
            em_step(&mut state, &obs, guided).unwrap();
            assert!(state.gamma.iter().all(|&g| g == 1.0));
        }
    }

    #[test]
    fn guided_steps_preserve_zeros_and_normalisation() {
        let spec = random_spec(60, 9, 4, 2);
        let obs = Observations::new(&spec, 0, 60);
        let guide = Array2::from_shape_fn((60, 3), |(t, c)| c == 2 || (c == 0 && t < 40) || (c == 1 && t >= 25));
        let gamma = init_posteriors::<f64>(guide.view(), None, Some(2), InitMode::TInit, 9).unwrap();
        let mut state = SmmState::new(guide.clone(), gamma, 4);
        let mut prev = f64::NEG_INFINITY;
        for _ in 0..15 {
            let ll = em_step(&mut state, &obs, true).unwrap();
            assert!(ll >= prev - 1e-6 * prev.abs());
            prev = ll;
            for t in 0..60 {
                for f in 0..9 {
                    let row = state.gamma.slice(s![t, f, ..]);
                    assert!((row.sum() - 1.0).abs() < 1e-6);
                    for c in 0..3 {
                        if !guide[[t, c]] {
                            assert_eq!(row[c], 0.0);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn zero_observations_are_ignored() {
        let mut spec = random_spec(20, 3, 2, 3);
        spec.values.slice_mut(s![0..5, .., ..]).fill(Complex::new(0.0, 0.0));
        let obs = Observations::new(&spec, 0, 20);
        assert!(!obs.valid[[0, 0]] && obs.valid[[10, 0]]);
        let guide = Array2::from_elem((20, 2), true);
        let gamma = init_posteriors::<f64>(guide.view(), None, Some(1), InitMode::TInit, 3).unwrap();
        let mut state = SmmState::new(guide, gamma, 2);
        assert!(em_step(&mut state, &obs, true).unwrap().is_finite());
    }

    #[test]
    fn empty_class_resets_to_identity() {
        let spec = random_spec(10, 3, 2, 4);
        let obs = Observations::new(&spec, 0, 10);
        let guide = Array2::from_shape_fn((10, 2), |(_, c)| c == 1);
        let gamma = init_posteriors::<f64>(guide.view(), None, Some(1), InitMode::TInit, 3).unwrap();
        let mut state = SmmState::new(guide, gamma, 2);
        em_step(&mut state, &obs, true).unwrap();
        assert!(state.empty[[0, 0]] && !state.empty[[0, 1]]);
        assert_eq!(state.shapes[0][0][[0, 0]], Complex::new(1.0, 0.0));
    }

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn posteriors_follow_the_oracle_mask_on_a_real_mixture() {
        let spec = MeetingSpec {
            num_speakers: 2,
            duration_secs: 8.0,
            target_overlap_ratio: 0.4,
            snr_db: 25.0,
            num_channels: 4,
            seed: 5,
            ..MeetingSpec::default()
        };
        let corpus = UtteranceCorpus::synthetic(2, 20, spec.sample_rate, 5);
        let rec = gen_meeting::<f64>(&spec, &corpus).unwrap();
        let cfg = StftConfig::new(512, 128).unwrap();
        let y = stft(&rec.mixture, &cfg).unwrap();
        let images: Vec<_> = (0..2).map(|k| stft(&rec.image_waveform(k), &cfg).unwrap()).collect();
        let irm = oracle_irm(&images, &y, 0).unwrap();
        let act = frame_activity(&rec.activities, &cfg);
        let whole = seg(0, 0, y.frames());
        let config = GssConfig { init_mode: InitMode::TInit, guided_steps: 20, ..GssConfig::default() };
        let out = run_gss(&y, &act, None, &whole, &config).unwrap();
        assert_eq!(out.log_likelihoods.len(), 21);
        for w in out.log_likelihoods[..20].windows(2) {
            assert!(w[1] >= w[0] - 1e-6 * w[0].abs(), "{w:?}");
        }
        for k in 0..2 {
            let post = out.speaker_mask(k);
            // per-bin correlation: classes are aligned across frequency by the guide
            let mut positive = 0;
            let bins: Vec<usize> = (20..200).step_by(10).collect();
            for &f in &bins {
                let a: Array1<f64> = post.column(f).to_owned();
                let b: Array1<f64> = irm.values.slice(s![.., f, k]).to_owned();
                let r = pearson(a.as_slice().unwrap(), b.as_slice().unwrap());
                positive += usize::from(r > 0.0);
            }
            assert_eq!(positive, bins.len(), "speaker {k}");
            let all = pearson(post.as_slice().unwrap(), irm.values.slice(s![.., .., k]).to_owned().as_slice().unwrap());
            assert!(all > 0.3, "speaker {k}: {all}");
        }
    }

    #[test]
    fn no_steps_returns_the_normalised_init() {
        let spec = random_spec(40, 5, 2, 6);
        let mut act = BinaryActivity::zeros(40, 2);
        for t in 0..40 {
            act.values[[t, 0]] = t < 30;
            act.values[[t, 1]] = t > 10;
        }
        let mask = MaskTensor::new(Array3::from_shape_fn((40, 5, 2), |(t, f, k)| ((t + f + k) % 5) as f64 / 5.0)).unwrap();
        let config = GssConfig { guided_steps: 0, nonguided_steps: 0, context_seconds: 0.0, ..GssConfig::default() };
        let out = run_gss(&spec, &act, Some(&mask), &seg(0, 5, 25), &config).unwrap();
        assert!(out.log_likelihoods.is_empty());
        assert_eq!(out.classes, vec![Some(0), Some(1), None]);
        for t in 0..20 {
            for f in 0..5 {
                let g = |k: usize| if act.get(t + 5, k) { mask.values[[t + 5, f, k]] } else { 0.0 };
                let z = g(0) + g(1) + 0.1;
                assert!((out.posteriors[[t, f, 0]] - g(0) / z).abs() < 1e-12);
                assert!((out.posteriors[[t, f, 2]] - 0.1 / z).abs() < 1e-12);
            }
        }
        let m = out.to_mask_tensor(3).unwrap();
        assert!(m.values.slice(s![.., .., 2]).iter().all(|&x| x == 0.0));
    }
}
