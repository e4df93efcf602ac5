use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::audio::FeatureTensor;
use crate::error::{Error, Result};
use crate::mask::BinaryActivity;
use crate::scalar::Real;

/// Fixed Gaussian map from feature space to embedding space.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingProjection<T> {
    /// `embedding_dim x feature_dim`.
    pub matrix: Array2<T>,
}

impl<T: Real> EmbeddingProjection<T> {
    pub fn new(feature_dim: usize, embedding_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xe3b0_c442);
        let scale = 1.0 / (feature_dim as f64).sqrt();
        let matrix = Array2::from_shape_simple_fn((embedding_dim, feature_dim), || {
            let z: f64 = StandardNormal.sample(&mut rng);
            T::of(z * scale)
        });
        Self { matrix }
    }
}

/// One embedding row per speaker, `K x E`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerEmbeddingSet<T> {
    pub values: Array2<T>,
}

impl<T: Real> SpeakerEmbeddingSet<T> {
    pub fn speakers(&self) -> usize {
        self.values.nrows()
    }
}

/// Mean feature over the frames where only that speaker talks, projected.
pub fn embed_speakers<T: Real>(
    features: &FeatureTensor<T>,
    activity: &BinaryActivity,
    projection: &EmbeddingProjection<T>,
) -> Result<SpeakerEmbeddingSet<T>> {
    if activity.frames() != features.frames() {
        return Err(Error::Shape(format!("{} activity frames vs {} feature frames", activity.frames(), features.frames())));
    }
    if projection.matrix.ncols() != features.dims() {
        return Err(Error::Shape(format!("projection expects {} dims, features have {}", projection.matrix.ncols(), features.dims())));
    }
    let k_total = activity.speakers();
    let mut values = Array2::zeros((k_total, projection.matrix.nrows()));
    for k in 0..k_total {
        let mut mean = Array1::<T>::zeros(features.dims());
        let mut count = 0usize;
        for t in activity.solo_frames(k) {
            mean += &features.values.row(t);
            count += 1;
        }
        if count == 0 {
            return Err(Error::NoSoloFrames(k));
        }
        mean /= T::of_usize(count);
        values.row_mut(k).assign(&projection.matrix.dot(&mean));
    }
    Ok(SpeakerEmbeddingSet { values })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn features(values: Array2<f64>) -> FeatureTensor<f64> {
        FeatureTensor { values, layout: Vec::new() }
    }

    #[test]
    fn constant_solo_rows_give_their_projection() {
        let mut x = Array2::from_shape_fn((6, 3), |(t, j)| (t * 3 + j) as f64);
        let row = ndarray::arr1(&[1.0, -2.0, 0.5]);
        let mut act = BinaryActivity::zeros(6, 2);
        for t in [0, 2, 4] {
            x.row_mut(t).assign(&row);
            act.values[[t, 0]] = true;
        }
        act.values[[1, 1]] = true;
        // overlap frame is not a solo frame and must not count
        act.values[[3, 0]] = true;
        act.values[[3, 1]] = true;
        let proj = EmbeddingProjection::new(3, 4, 1);
        let e = embed_speakers(&features(x.clone()), &act, &proj).unwrap();
        let want = proj.matrix.dot(&row);
        assert!((&e.values.row(0) - &want).iter().all(|d| d.abs() < 1e-12));
        let want1 = proj.matrix.dot(&x.row(1));
        assert!((&e.values.row(1) - &want1).iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn frame_order_does_not_matter() {
        let x = Array2::from_shape_fn((8, 2), |(t, j)| ((t + 1) * (j + 2)) as f64);
        let mut act = BinaryActivity::zeros(8, 2);
        for t in 0..8 {
            act.values[[t, t % 2]] = true;
        }
        let proj = EmbeddingProjection::new(2, 3, 2);
        let a = embed_speakers(&features(x.clone()), &act, &proj).unwrap();
        let order = [7, 6, 5, 4, 3, 2, 1, 0];
        let xr = Array2::from_shape_fn((8, 2), |(t, j)| x[[order[t], j]]);
        let mut ar = BinaryActivity::zeros(8, 2);
        for t in 0..8 {
            ar.values[[t, order[t] % 2]] = true;
        }
        let b = embed_speakers(&features(xr), &ar, &proj).unwrap();
        assert!((a.values - b.values).iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn missing_solo_frames_name_the_speaker() {
        let act = BinaryActivity { values: Array2::from_elem((4, 2), true) };
        let proj = EmbeddingProjection::new(2, 3, 3);
        let err = embed_speakers(&features(Array2::zeros((4, 2))), &act, &proj).unwrap_err();
        assert!(matches!(err, Error::NoSoloFrames(0)));
    }
}
