use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{ActivityEstimate, BinaryActivity};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Whether runs shorter than `min_segment_frames` are stretched.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MinLengthPolicy {
    /// Stretch only when the closing does not already overestimate
    /// (`dilation_len == erosion_len`).
    #[default]
    Auto,
    Always,
    Never,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentationParams {
    pub threshold: f64,
    pub dilation_len: usize,
    pub erosion_len: usize,
    /// 750 frames is 12 s at a 16 ms shift.
    pub max_segment_frames: usize,
    pub min_segment_frames: usize,
    pub min_length: MinLengthPolicy,
}

impl Default for SegmentationParams {
    fn default() -> Self {
        Self {
            threshold: 0.3,
            dilation_len: 161,
            erosion_len: 81,
            max_segment_frames: 750,
            min_segment_frames: 40,
            min_length: MinLengthPolicy::Auto,
        }
    }
}

impl SegmentationParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!("threshold {} outside (0, 1)", self.threshold)));
        }
        if self.erosion_len == 0 || self.dilation_len % 2 == 0 || self.erosion_len % 2 == 0 {
            return Err(Error::Config("morphology windows must be odd and positive".into()));
        }
        if self.dilation_len < self.erosion_len {
            return Err(Error::Config("dilation window shorter than erosion window".into()));
        }
        if self.max_segment_frames == 0 {
            return Err(Error::Config("max_segment_frames must be positive".into()));
        }
        Ok(())
    }

    pub fn enforce_min_length(&self) -> bool {
        match self.min_length {
            MinLengthPolicy::Auto => self.dilation_len == self.erosion_len,
            MinLengthPolicy::Always => true,
            MinLengthPolicy::Never => false,
        }
    }
}

/// Centered sliding window over a binary sequence.
///
/// With `pad_value == false` this is a dilation (window max, zero padded);
/// with `pad_value == true` an erosion (window min, one padded).
fn slide(input: &[bool], window: usize, pad_value: bool) -> Vec<bool> {
    let n = input.len();
    let half = window / 2;
    // prefix counts of ones, padding included implicitly
    let mut prefix = vec![0usize; n + 1];
    for (i, &x) in input.iter().enumerate() {
        prefix[i + 1] = prefix[i] + usize::from(x);
    }
    (0..n)
        .map(|t| {
            let lo = t.saturating_sub(half);
            let hi = (t + half + 1).min(n);
            let ones = prefix[hi] - prefix[lo];
            if pad_value {
                ones == hi - lo
            } else {
                ones > 0
            }
        })
        .collect()
}

/// Threshold at `params.threshold`, then close (dilation followed by erosion).
pub fn threshold_close<T: Real>(act: &ActivityEstimate<T>, params: &SegmentationParams) -> Result<BinaryActivity> {
    params.validate()?;
    let (frames, speakers) = act.values.dim();
    let tau = T::of(params.threshold);
    let mut out = Array2::from_elem((frames, speakers), false);
    for k in 0..speakers {
        let delta: Vec<bool> = act.values.column(k).iter().map(|&a| a >= tau).collect();
        let closed = slide(&slide(&delta, params.dilation_len, false), params.erosion_len, true);
        for (t, v) in closed.into_iter().enumerate() {
            out[[t, k]] = v;
        }
    }
    Ok(BinaryActivity { values: out })
}
