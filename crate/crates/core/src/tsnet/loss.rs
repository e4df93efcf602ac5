use ndarray::{s, Array2, Array3, ArrayView2, ArrayView3};
use num_complex::Complex;
use rayon::prelude::*;

use crate::audio::{istft_adjoint, synthesize_frames, StftConfig};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Mean absolute error floor applied before the logarithm.
pub const LOGMAE_FLOOR: f64 = 1e-8;

pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Summed binary cross entropy of `logits` against `targets`, and its gradient.
pub fn loss_bce<T: Real>(logits: ArrayView2<'_, T>, targets: ArrayView2<'_, bool>) -> Result<(T, Array2<T>)> {
    if logits.dim() != targets.dim() {
        return Err(Error::Shape(format!("logits {:?} vs targets {:?}", logits.dim(), targets.dim())));
    }
    let mut loss = T::zero();
    let mut grad = Array2::zeros(logits.raw_dim());
    for ((g, &l), &y) in grad.iter_mut().zip(logits.iter()).zip(targets.iter()) {
        let y = if y { T::one() } else { T::zero() };
        loss += l.max(T::zero()) - l * y + (-l.abs()).exp().ln_1p();
        *g = sigmoid(l) - y;
    }
    Ok((loss, grad))
}

fn reconstruct<T: Real>(cfg: &StftConfig, spec: ArrayView2<'_, Complex<T>>, len: usize) -> Vec<T> {
    let (start, samples) = synthesize_frames(cfg, spec, 0, spec.nrows());
    (0..len)
        .map(|l| {
            let p = l as isize - start;
            if p >= 0 && (p as usize) < samples.len() {
                samples[p as usize]
            } else {
                T::zero()
            }
        })
        .collect()
}

/// `log10(1/L · Σ_k Σ_l |x̂_kl − x_kl|)` where `x̂_k = istft(m_k ⊙ Y)`.
///
/// `masks` is `frames x bins x speakers`, `mixture` the reference-channel
/// spectrum, `targets` `speakers x samples`. Returns the loss and its gradient
/// with respect to the masks.
pub fn loss_logmae<T: Real>(
    masks: ArrayView3<'_, T>,
    mixture: ArrayView2<'_, Complex<T>>,
    targets: ArrayView2<'_, T>,
    cfg: &StftConfig,
) -> Result<(T, Array3<T>)> {
    let (frames, bins, speakers) = masks.dim();
    if mixture.dim() != (frames, bins) || targets.nrows() != speakers || bins != cfg.bins() {
        return Err(Error::Shape(format!(
            "masks {:?}, mixture {:?}, targets {:?}, {} stft bins",
            masks.dim(),
            mixture.dim(),
            targets.dim(),
            cfg.bins()
        )));
    }
    let len = targets.ncols();
    if len == 0 {
        return Err(Error::EmptyInput("loss targets"));
    }
    let residuals: Vec<Vec<T>> = (0..speakers)
        .into_par_iter()
        .map(|k| {
            let z = Array2::from_shape_fn((frames, bins), |(t, f)| mixture[[t, f]] * masks[[t, f, k]]);
            let est = reconstruct(cfg, z.view(), len);
            est.iter().zip(targets.row(k).iter()).map(|(&a, &b)| a - b).collect()
        })
        .collect();
    let total: f64 = residuals.iter().flatten().map(|r| r.to_f64_lossy().abs()).sum();
    let mae = total / len as f64;
    let mut grad = Array3::zeros((frames, bins, speakers));
    if mae <= LOGMAE_FLOOR {
        return Ok((T::of(LOGMAE_FLOOR.log10()), grad));
    }
    // d log10(S/L) / dx̂ = sign(r) / (S ln 10)
    let scale = 1.0 / (total * std::f64::consts::LN_10);
    let per_speaker: Vec<Array2<Complex<T>>> = residuals
        .par_iter()
        .map(|r| {
            let g: Vec<T> = r
                .iter()
                .map(|&v| if v == T::zero() { T::zero() } else { T::of(scale) * v.signum() })
                .collect();
            istft_adjoint(cfg, &g, frames)
        })
        .collect();
    for (k, gz) in per_speaker.iter().enumerate() {
        let mut gk = grad.slice_mut(s![.., .., k]);
        for t in 0..frames {
            for f in 0..bins {
                gk[[t, f]] = (gz[[t, f]].conj() * mixture[[t, f]]).re;
            }
        }
    }
    Ok((T::of(mae.log10()), grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::{stft, WaveformBlock};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bce_reference_values() {
        let logits = Array2::<f64>::zeros((3, 2));
        let targets = Array2::from_shape_fn((3, 2), |(t, k)| (t + k) % 2 == 0);
        let (loss, _) = loss_bce(logits.view(), targets.view()).unwrap();
        assert!((loss - 6.0 * 2f64.ln()).abs() < 1e-12);
        let big = targets.mapv(|y| if y { 800.0f64 } else { -800.0 });
        let (loss, grad) = loss_bce(big.view(), targets.view()).unwrap();
        assert!(loss.abs() < 1e-300 && grad.iter().all(|g| g.abs() < 1e-300));
        // flipping labels and logit signs together leaves the loss unchanged
        let l = Array2::from_shape_fn((3, 2), |(t, k)| t as f64 - 1.3 * k as f64);
        let (a, _) = loss_bce(l.view(), targets.view()).unwrap();
        let (b, _) = loss_bce(l.mapv(|v| -v).view(), targets.mapv(|y| !y).view()).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn bce_gradient_matches_finite_differences() {
        let l = Array2::from_shape_fn((2, 3), |(t, k)| 0.7 * t as f64 - 0.4 * k as f64);
        let y = Array2::from_shape_fn((2, 3), |(t, k)| (t * k) % 2 == 1);
        let (_, g) = loss_bce(l.view(), y.view()).unwrap();
        for (i, j) in [(0, 0), (1, 2)] {
            let mut p = l.clone();
            p[[i, j]] += 1e-6;
            let mut m = l.clone();
            m[[i, j]] -= 1e-6;
            let fd = (loss_bce(p.view(), y.view()).unwrap().0 - loss_bce(m.view(), y.view()).unwrap().0) / 2e-6;
            assert!((fd - g[[i, j]]).abs() < 1e-8);
        }
    }

    #[test]
    fn logmae_reference_values() {
        let cfg = StftConfig::new(16, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..64).map(|_| rng.random_range(-0.3..0.3)).collect();
        let wave = WaveformBlock::mono(x.clone(), 8000).unwrap();
        let y = stft(&wave, &cfg).unwrap();
        let targets = Array2::from_shape_vec((1, 64), x).unwrap();
        let ones = Array3::ones((y.frames(), y.bins(), 1));
        let (loss, grad) = loss_logmae(ones.view(), y.channel(0), targets.view(), &cfg).unwrap();
        assert_eq!(loss, -8.0);
        assert!(grad.iter().all(|&g| g == 0.0));
        // zero estimate of a signal with mean |x| = 0.1
        let tenth = Array2::from_shape_fn((1, 64), |(_, l)| if l % 2 == 0 { 0.1 } else { -0.1 });
        let zeros = Array3::zeros((y.frames(), y.bins(), 1));
        let (loss, _) = loss_logmae(zeros.view(), y.channel(0), tenth.view(), &cfg).unwrap();
        assert!((loss + 1.0).abs() < 1e-12);
    }

    #[test]
    fn logmae_gradient_matches_finite_differences() {
        // two frames: window 8, shift 2, ten samples
        let cfg = StftConfig::new(8, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let len = 6;
        let frames = cfg.num_frames(len);
        let bins = cfg.bins();
        let mix = Array2::from_shape_simple_fn((frames, bins), || Complex::new(rng.random_range(-1.0f64..1.0), rng.random_range(-1.0..1.0)));
        let mut mix = mix;
        for t in 0..frames {
            mix[[t, 0]].im = 0.0;
            mix[[t, bins - 1]].im = 0.0;
        }
        let targets = Array2::from_shape_simple_fn((2, len), || rng.random_range(-1.0..1.0));
        let masks = Array3::from_shape_simple_fn((frames, bins, 2), || rng.random_range(0.1f64..0.9));
        let (_, grad) = loss_logmae(masks.view(), mix.view(), targets.view(), &cfg).unwrap();
        let eps = 1e-7;
        let mut worst: f64 = 0.0;
        for t in 0..frames {
            for f in 0..bins {
                for k in 0..2 {
                    let mut p = masks.clone();
                    p[[t, f, k]] += eps;
                    let mut m = masks.clone();
                    m[[t, f, k]] -= eps;
                    let fd = (loss_logmae(p.view(), mix.view(), targets.view(), &cfg).unwrap().0
                        - loss_logmae(m.view(), mix.view(), targets.view(), &cfg).unwrap().0)
                        / (2.0 * eps);
                    let an = grad[[t, f, k]];
                    worst = worst.max((fd - an).abs() / an.abs().max(1e-3));
                }
            }
        }
        assert!(worst < 1e-4, "worst relative error {worst}");
    }
}
