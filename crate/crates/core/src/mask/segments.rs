use serde::{Deserialize, Serialize};

use super::{ActivityEstimate, BinaryActivity, SegmentationParams};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// A frame range `[start, end)` attributed to one speaker.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Segment {
    pub id: usize,
    pub speaker: usize,
    pub start: usize,
    pub end: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

fn one_runs(col: impl Iterator<Item = bool>) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut open = None;
    let mut n = 0;
    for (t, a) in col.enumerate() {
        match (a, open) {
            (true, None) => open = Some(t),
            (false, Some(s)) => {
                out.push((s, t));
                open = None;
            }
            _ => {}
        }
        n = t + 1;
    }
    if let Some(s) = open {
        out.push((s, n));
    }
    out
}

/// Split `[start, end)` at the activity minimum until no piece exceeds `max`.
fn split_run<T: Real>(start: usize, end: usize, act: &[T], max: usize, min: usize, out: &mut Vec<(usize, usize)>) {
    if end - start <= max || end - start < 2 {
        out.push((start, end));
        return;
    }
    // keep both halves at least `min` long whenever the run allows it
    let m = min.max(1);
    let (lo, hi) = if end - start >= 2 * m { (start + m, end - m) } else { (start + 1, end - 1) };
    let mut best = lo;
    for t in lo..=hi {
        if act[t] < act[best] {
            best = t;
        }
    }
    split_run(start, best, act, max, min, out);
    split_run(best, end, act, max, min, out);
}

/// One segment per maximal run of activity per speaker, split and stretched
/// according to `params`. Segments are ordered by start frame, then speaker.
pub fn activity_to_segments<T: Real>(
    bin: &BinaryActivity,
    act: &ActivityEstimate<T>,
    params: &SegmentationParams,
) -> Result<Vec<Segment>> {
    params.validate()?;
    if bin.values.dim() != act.values.dim() {
        return Err(Error::Shape(format!("binary {:?} vs soft {:?} activity", bin.values.dim(), act.values.dim())));
    }
    let frames = bin.frames();
    let mut all = Vec::new();
    for k in 0..bin.speakers() {
        let soft: Vec<T> = act.values.column(k).to_vec();
        let mut pieces = Vec::new();
        for (s, e) in one_runs(bin.values.column(k).iter().copied()) {
            split_run(s, e, &soft, params.max_segment_frames, params.min_segment_frames, &mut pieces);
        }
        if params.enforce_min_length() {
            let bounds: Vec<(usize, usize)> = pieces.clone();
            for (i, piece) in pieces.iter_mut().enumerate() {
                let len = piece.1 - piece.0;
                if len >= params.min_segment_frames {
                    continue;
                }
                let need = params.min_segment_frames - len;
                let left = need / 2;
                // never run into the neighbouring segments of the same speaker
                let floor = if i > 0 { bounds[i - 1].1 } else { 0 };
                let ceil = bounds.get(i + 1).map_or(frames, |b| b.0);
                piece.0 = piece.0.saturating_sub(left).max(floor);
                piece.1 = (piece.1 + need - left).min(ceil);
            }
        }
        all.extend(pieces.into_iter().map(|(start, end)| Segment { id: 0, speaker: k, start, end }));
    }
    all.sort_by_key(|s| (s.start, s.speaker, s.end));
    for (id, s) in all.iter_mut().enumerate() {
        s.id = id;
    }
    Ok(all)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::MinLengthPolicy;
    use ndarray::Array2;
    use proptest::prelude::*;

    fn params(max: usize, min: usize, policy: MinLengthPolicy) -> SegmentationParams {
        SegmentationParams {
            threshold: 0.5,
            dilation_len: 1,
            erosion_len: 1,
            max_segment_frames: max,
            min_segment_frames: min,
            min_length: policy,
        }
    }

    fn single(bits: Vec<bool>, soft: Vec<f64>) -> (BinaryActivity, ActivityEstimate<f64>) {
        let n = bits.len();
        (
            BinaryActivity { values: Array2::from_shape_vec((n, 1), bits).unwrap() },
            ActivityEstimate { values: Array2::from_shape_vec((n, 1), soft).unwrap() },
        )
    }

    #[test]
    fn one_run_one_segment() {
        let (b, a) = single(vec![false, true, true, false], vec![0.0, 1.0, 1.0, 0.0]);
        let segs = activity_to_segments(&b, &a, &params(750, 40, MinLengthPolicy::Never)).unwrap();
        assert_eq!(segs, vec![Segment { id: 0, speaker: 0, start: 1, end: 3 }]);
    }

    #[test]
    fn long_run_split_at_activity_dip() {
        let mut soft = vec![0.9; 1500];
        soft[700] = 0.05;
        let (b, a) = single(vec![true; 1500], soft);
        let segs = activity_to_segments(&b, &a, &params(800, 40, MinLengthPolicy::Never)).unwrap();
        let spans: Vec<_> = segs.iter().map(|s| (s.start, s.end)).collect();
        assert_eq!(spans, vec![(0, 700), (700, 1500)]);
        // at 750 the 800-frame remainder is split again
        let segs = activity_to_segments(&b, &a, &params(750, 40, MinLengthPolicy::Never)).unwrap();
        assert_eq!((segs[0].start, segs[0].end), (0, 700));
        assert_eq!(segs[1].start, 700);
        assert!(segs.iter().all(|s| s.len() <= 750));
    }

    #[test]
    fn argmin_ties_break_early() {
        let (b, a) = single(vec![true; 10], vec![0.5; 10]);
        let segs = activity_to_segments(&b, &a, &params(6, 2, MinLengthPolicy::Never)).unwrap();
        let spans: Vec<_> = segs.iter().map(|s| (s.start, s.end)).collect();
        assert_eq!(spans, vec![(0, 2), (2, 4), (4, 10)]);
    }

    #[test]
    fn short_run_centered_to_min_length() {
        let mut bits = vec![false; 300];
        bits[100..110].iter_mut().for_each(|b| *b = true);
        let (b, a) = single(bits, vec![0.5; 300]);
        let segs = activity_to_segments(&b, &a, &params(750, 40, MinLengthPolicy::Always)).unwrap();
        assert_eq!((segs[0].start, segs[0].end), (85, 125));
        let segs = activity_to_segments(&b, &a, &params(750, 40, MinLengthPolicy::Never)).unwrap();
        assert_eq!((segs[0].start, segs[0].end), (100, 110));
    }

    #[test]
    fn min_length_clipped_at_edges() {
        let mut bits = vec![false; 50];
        bits[0..4].iter_mut().for_each(|b| *b = true);
        let (b, a) = single(bits, vec![0.5; 50]);
        let segs = activity_to_segments(&b, &a, &params(750, 40, MinLengthPolicy::Always)).unwrap();
        assert_eq!((segs[0].start, segs[0].end), (0, 22));
    }

    #[test]
    fn auto_policy_follows_overestimation() {
        let mut p = params(750, 40, MinLengthPolicy::Auto);
        assert!(p.enforce_min_length());
        p.dilation_len = 3;
        assert!(!p.enforce_min_length());
    }

    proptest! {
        #[test]
        fn segments_reconstruct_activity(bits in prop::collection::vec(any::<bool>(), 1..400),
                                         soft in prop::collection::vec(0.0f64..1.0, 400),
                                         max in 1usize..60) {
            let n = bits.len();
            let (b, a) = single(bits.clone(), soft[..n].to_vec());
            let segs = activity_to_segments(&b, &a, &params(max, 3, MinLengthPolicy::Never)).unwrap();
            let rebuilt = BinaryActivity::from_segments(&segs, n, 1);
            prop_assert_eq!(rebuilt.values.column(0).to_vec(), bits);
            let mut covered = vec![0u8; n];
            for s in &segs {
                prop_assert!(s.start < s.end && s.len() <= max);
                for t in s.start..s.end {
                    covered[t] += 1;
                }
            }
            prop_assert!(covered.iter().all(|&c| c <= 1));
        }
    }
}
