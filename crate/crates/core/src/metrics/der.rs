use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::hungarian::min_cost_assignment;
use crate::error::{Error, Result};

/// Scoring grid step in seconds.
pub const DER_RESOLUTION: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeakerTurn {
    pub speaker: usize,
    pub start: f64,
    pub end: f64,
}

/// Error durations in seconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DerBreakdown {
    pub missed: f64,
    pub false_alarm: f64,
    pub confusion: f64,
    pub reference_time: f64,
}

impl DerBreakdown {
    pub fn rate(&self) -> f64 {
        (self.missed + self.false_alarm + self.confusion) / self.reference_time
    }
}

/// First grid cell whose centre is at or after `t`.
fn cell_at(t: f64) -> usize {
    (t / DER_RESOLUTION - 0.5).ceil().max(0.0) as usize
}

fn rasterize(turns: &[SpeakerTurn], cells: usize) -> Vec<Vec<bool>> {
    let ids: BTreeMap<usize, usize> =
        turns.iter().map(|t| t.speaker).collect::<std::collections::BTreeSet<_>>().into_iter().zip(0..).collect();
    let mut out = vec![vec![false; cells]; ids.len()];
    for t in turns {
        let row = &mut out[ids[&t.speaker]];
        for c in cell_at(t.start)..cell_at(t.end).min(cells) {
            row[c] = true;
        }
    }
    out
}

/// Diarization error rate with a `collar` (seconds) excluded around every
/// reference boundary and the best one-to-one speaker mapping.
pub fn der(reference: &[SpeakerTurn], hypothesis: &[SpeakerTurn], collar: f64) -> Result<DerBreakdown> {
    let horizon = reference.iter().chain(hypothesis).map(|t| t.end).fold(0.0, f64::max);
    let cells = cell_at(horizon) + 1;
    let refs = rasterize(reference, cells);
    let hyps = rasterize(hypothesis, cells);
    let mut scored = vec![true; cells];
    if collar > 0.0 {
        for t in reference {
            for b in [t.start, t.end] {
                for c in cell_at(b - collar)..cell_at(b + collar).min(cells) {
                    scored[c] = false;
                }
            }
        }
    }
    let mut overlap = vec![vec![0i64; hyps.len()]; refs.len()];
    let (mut missed, mut false_alarm, mut matched_pairs, mut total) = (0i64, 0i64, 0i64, 0i64);
    for c in (0..cells).filter(|&c| scored[c]) {
        let nr = refs.iter().filter(|r| r[c]).count() as i64;
        let nh = hyps.iter().filter(|h| h[c]).count() as i64;
        total += nr;
        missed += (nr - nh).max(0);
        false_alarm += (nh - nr).max(0);
        matched_pairs += nr.min(nh);
        for (i, r) in refs.iter().enumerate().filter(|(_, r)| r[c]) {
            let _ = r;
            for (j, h) in hyps.iter().enumerate() {
                if h[c] {
                    overlap[i][j] += 1;
                }
            }
        }
    }
    if total == 0 {
        return Err(Error::NoReferenceSpeech);
    }
    let correct: i64 = if hyps.is_empty() {
        0
    } else {
        let cost: Vec<Vec<i64>> = overlap.iter().map(|row| row.iter().map(|&o| -o).collect()).collect();
        min_cost_assignment(&cost)
            .iter()
            .enumerate()
            .filter_map(|(i, j)| j.map(|j| overlap[i][j]))
            .sum()
    };
    let secs = |n: i64| n as f64 * DER_RESOLUTION;
    Ok(DerBreakdown {
        missed: secs(missed),
        false_alarm: secs(false_alarm),
        confusion: secs(matched_pairs - correct),
        reference_time: secs(total),
    })
}
