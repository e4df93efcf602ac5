//! Stand-in speech recognizer for the synthetic corpus.
//!
//! Words are found as runs of strong tone-band energy and labelled by the
//! two dominant word tones, which is how the generator encodes them.

use anyhow::Result;
use meetsep_core::audio::{stft, StftConfig, WaveformBlock};
use meetsep_core::synth::{word_tone_pair, VOCABULARY, WORD_TONES};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecognizerParams {
    pub window_secs: f64,
    pub shift_secs: f64,
    /// Half width of each tone band in Hz.
    pub band_hz: f64,
    /// Detection threshold relative to the loudest frame, in dB.
    pub relative_threshold_db: f64,
    /// Absolute floor on the frame score; guards silent inputs.
    pub absolute_threshold: f64,
    pub min_word_secs: f64,
    /// Shorter gaps do not end a word.
    pub bridge_secs: f64,
}

impl Default for RecognizerParams {
    fn default() -> Self {
        Self {
            window_secs: 0.016,
            shift_secs: 0.004,
            band_hz: 100.0,
            relative_threshold_db: -20.0,
            absolute_threshold: 1.0,
            min_word_secs: 0.06,
            bridge_secs: 0.012,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecognizedWord {
    pub label: String,
    /// Seconds from the start of the analysed signal.
    pub start: f64,
    pub end: f64,
}

fn pair_label(a: usize, b: usize) -> &'static str {
    let (lo, hi) = (a.min(b), a.max(b));
    let word = (0..VOCABULARY.len()).find(|&w| word_tone_pair(w) == (lo, hi)).expect("every tone pair is a word");
    VOCABULARY[word]
}

fn top_two(e: &[f64]) -> (usize, usize) {
    let mut order: Vec<usize> = (0..e.len()).collect();
    order.sort_by(|&i, &j| e[j].total_cmp(&e[i]).then(i.cmp(&j)));
    (order[0].min(order[1]), order[0].max(order[1]))
}

/// Transcribes a mono signal.
pub fn recognize(samples: &[f32], sample_rate: u32, params: &RecognizerParams) -> Result<Vec<RecognizedWord>> {
    let cfg = StftConfig::from_durations(params.window_secs, params.shift_secs, sample_rate)?;
    if samples.len() < cfg.window_length {
        return Ok(Vec::new());
    }
    let wave = WaveformBlock::mono(samples.iter().map(|&x| f64::from(x)).collect(), sample_rate)?;
    let spec = stft(&wave, &cfg)?;
    let bin_hz = f64::from(sample_rate) / cfg.fft_size as f64;
    let bands: Vec<(usize, usize)> = WORD_TONES
        .iter()
        .map(|&hz| {
            let lo = ((hz - params.band_hz) / bin_hz).ceil().max(0.0) as usize;
            let hi = (((hz + params.band_hz) / bin_hz).floor() as usize).min(spec.bins() - 1);
            (lo, hi)
        })
        .collect();
    let y = spec.channel(0);
    let energies: Vec<Vec<f64>> = (0..spec.frames())
        .map(|t| bands.iter().map(|&(lo, hi)| (lo..=hi).map(|f| y[[t, f]].norm_sqr()).sum()).collect())
        .collect();
    let score: Vec<f64> = energies
        .iter()
        .map(|e| {
            let (a, b) = top_two(e);
            e[a] + e[b]
        })
        .collect();
    let peak = score.iter().cloned().fold(0.0, f64::max);
    let threshold = (peak * 10f64.powf(params.relative_threshold_db / 10.0)).max(params.absolute_threshold);
    let active: Vec<bool> = score.iter().map(|&s| s > threshold).collect();
    let frame_secs = cfg.shift as f64 / f64::from(sample_rate);
    let bridge = (params.bridge_secs / frame_secs).round() as usize;
    let min_frames = (params.min_word_secs / frame_secs).round() as usize;

    // runs of active frames with short gaps bridged
    let mut runs: Vec<(usize, usize)> = Vec::new();
    for (t, &a) in active.iter().enumerate() {
        if !a {
            continue;
        }
        match runs.last_mut() {
            Some(last) if t - last.1 <= bridge => last.1 = t + 1,
            _ => runs.push((t, t + 1)),
        }
    }

    // split runs where the dominant pair changes for long enough
    let mut words = Vec::new();
    let centre = |t: usize| (t * cfg.shift) as f64 - cfg.pad() as f64 + cfg.window_length as f64 / 2.0;
    let to_secs = |s: f64| (s / f64::from(sample_rate)).max(0.0);
    for (s, e) in runs {
        let mut pieces: Vec<(usize, usize, (usize, usize))> = Vec::new();
        for t in s..e {
            let pair = top_two(&energies[t]);
            match pieces.last_mut() {
                Some(p) if p.2 == pair => p.1 = t + 1,
                _ => pieces.push((t, t + 1, pair)),
            }
        }
        // fold short pieces into the previous one, then merge equal neighbours
        let mut merged: Vec<(usize, usize, (usize, usize))> = Vec::new();
        for p in pieces {
            match merged.last_mut() {
                Some(last) if p.1 - p.0 < min_frames || last.2 == p.2 => last.1 = p.1,
                Some(last) if last.1 - last.0 < min_frames => *last = (last.0, p.1, p.2),
                _ => merged.push(p),
            }
        }
        for (a, b, _) in merged {
            if b - a < min_frames {
                continue;
            }
            let mut mean = vec![0.0; WORD_TONES.len()];
            for row in &energies[a..b] {
                for (m, v) in mean.iter_mut().zip(row) {
                    *m += v;
                }
            }
            let (i, j) = top_two(&mean);
            words.push(RecognizedWord {
                label: pair_label(i, j).to_string(),
                start: to_secs(centre(a) - cfg.shift as f64 / 2.0),
                end: to_secs(centre(b - 1) + cfg.shift as f64 / 2.0),
            });
        }
    }
    Ok(words)
}
