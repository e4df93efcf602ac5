//! Synthetic source utterances: "words" are short tone complexes whose
//! labels are known, so transcripts exist without any speech corpus.
//!
//! Each word is a gliding harmonic buzz at the speaker's pitch with a little
//! breath noise, plus two fixed tones that encode the word identity.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Carrier frequencies (Hz) of the word-identity tones.
pub const WORD_TONES: [f64; 8] = [1500.0, 1900.0, 2400.0, 2900.0, 3500.0, 4100.0, 4800.0, 5500.0];

/// One label per unordered pair of word tones.
pub const VOCABULARY: [&str; 28] = [
    "alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf", "hotel", "india", "juliett", "kilo", "lima",
    "mike", "november", "oscar", "papa", "quebec", "romeo", "sierra", "tango", "uniform", "victor", "whiskey",
    "xray", "yankee", "zulu", "one", "two",
];

/// Indices into [`WORD_TONES`] for vocabulary entry `word`.
pub fn word_tone_pair(word: usize) -> (usize, usize) {
    let mut w = word;
    for i in 0..WORD_TONES.len() {
        let row = WORD_TONES.len() - 1 - i;
        if w < row {
            return (i, i + 1 + w);
        }
        w -= row;
    }
    panic!("word index {word} outside the vocabulary");
}

pub fn word_index(label: &str) -> Option<usize> {
    VOCABULARY.iter().position(|&w| w == label)
}

/// Speaker-specific voiced carrier under every word.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Voice {
    pub f0: f64,
    pub harmonic_gains: Vec<f64>,
    /// Added to every word tone so concurrent speakers never share a frequency.
    pub tone_offset_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordSpan {
    pub label: String,
    /// Sample offsets relative to the owning utterance (or meeting, once placed).
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceUtterance {
    pub speaker: usize,
    pub samples: Vec<f64>,
    pub words: Vec<WordSpan>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceCorpus {
    pub sample_rate: u32,
    pub voices: Vec<Voice>,
    pub utterances: Vec<SourceUtterance>,
}

const RAMP_SECS: f64 = 0.015;
/// Voice tone offsets are stratified over `[-MAX, MAX]`.
pub const MAX_TONE_OFFSET_HZ: f64 = 60.0;
/// RMS of the breath noise under every word.
const ASPIRATION: f64 = 0.05;

fn synth_word(voice: &Voice, word: usize, len: usize, sample_rate: u32, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let sr = f64::from(sample_rate);
    let (a, b) = word_tone_pair(word);
    let f0 = voice.f0 * rng.random_range(0.96..1.04);
    let glide = rng.random_range(-0.06..0.06);
    let nyquist_guard = 0.45 * sr;
    let phases: Vec<f64> = (0..voice.harmonic_gains.len() + 2).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
    let buzz_power: f64 = voice.harmonic_gains.iter().map(|g| g * g / 2.0).sum();
    let buzz_scale = (0.5 / buzz_power.max(1e-12)).sqrt() * 0.5;
    let ramp = ((RAMP_SECS * sr) as usize).max(1).min(len / 2).max(1);
    let n = voice.harmonic_gains.len();
    let mut base_phase = 0.0;
    (0..len)
        .map(|l| {
            let t = l as f64 / sr;
            let pitch = f0 * (1.0 + glide * l as f64 / len as f64);
            base_phase += std::f64::consts::TAU * pitch / sr;
            let mut x = 0.0;
            for (h, g) in voice.harmonic_gains.iter().enumerate() {
                if pitch * (h + 1) as f64 > nyquist_guard {
                    break;
                }
                x += buzz_scale * g * (base_phase * (h + 1) as f64 + phases[h]).sin();
            }
            x += ASPIRATION * rng.random_range(-1.0..1.0) * 3f64.sqrt();
            x += 0.5 * (std::f64::consts::TAU * (WORD_TONES[a] + voice.tone_offset_hz) * t + phases[n]).sin();
            x += 0.5 * (std::f64::consts::TAU * (WORD_TONES[b] + voice.tone_offset_hz) * t + phases[n + 1]).sin();
            let env = if l < ramp {
                0.5 - 0.5 * (std::f64::consts::PI * l as f64 / ramp as f64).cos()
            } else if l >= len - ramp {
                0.5 - 0.5 * (std::f64::consts::PI * (len - 1 - l) as f64 / ramp as f64).cos()
            } else {
                1.0
            };
            x * env
        })
        .collect()
}

impl UtteranceCorpus {
    /// Deterministic pool of `per_speaker` utterances for each of `speakers` voices.
    pub fn synthetic(speakers: usize, per_speaker: usize, sample_rate: u32, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_c0de);
        let sr = f64::from(sample_rate);
        let voices: Vec<Voice> = (0..speakers)
            .map(|k| {
                // spread fundamentals over 95..240 Hz so voices stay distinct
                let base = 95.0 + 145.0 * (k as f64 + rng.random_range(0.1..0.9)) / speakers.max(1) as f64;
                let harmonics = ((0.45 * sr / base) as usize).max(1);
                let harmonic_gains =
                    (1..=harmonics).map(|h| rng.random_range(0.5..1.5) / (h as f64).powf(0.6)).collect();
                let slot = (k as f64 + rng.random_range(0.4..0.6)) / speakers.max(1) as f64;
                Voice { f0: base, harmonic_gains, tone_offset_hz: MAX_TONE_OFFSET_HZ * (2.0 * slot - 1.0) }
            })
            .collect();
        let mut utterances = Vec::with_capacity(speakers * per_speaker);
        for _ in 0..per_speaker {
            for (k, voice) in voices.iter().enumerate() {
                let n_words = rng.random_range(3..=7);
                let gain = rng.random_range(0.3..0.6);
                let mut samples = Vec::new();
                let mut words = Vec::new();
                for w in 0..n_words {
                    if w > 0 {
                        let gap = (rng.random_range(0.06..0.14) * sr) as usize;
                        samples.extend(std::iter::repeat_n(0.0, gap));
                    }
                    let word = rng.random_range(0..VOCABULARY.len());
                    let len = (rng.random_range(0.12..0.26) * sr) as usize;
                    let start = samples.len();
                    samples.extend(synth_word(voice, word, len, sample_rate, &mut rng).into_iter().map(|x| x * gain));
                    words.push(WordSpan { label: VOCABULARY[word].to_string(), start, end: start + len });
                }
                utterances.push(SourceUtterance { speaker: k, samples, words });
            }
        }
        Self { sample_rate, voices, utterances }
    }

    pub fn speakers(&self) -> usize {
        self.voices.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tone_pairs_cover_vocabulary_uniquely() {
        let mut seen = std::collections::HashSet::new();
        for w in 0..VOCABULARY.len() {
            let (a, b) = word_tone_pair(w);
            assert!(a < b && b < WORD_TONES.len());
            assert!(seen.insert((a, b)));
        }
        assert_eq!(word_index("zulu"), Some(25));
    }

    #[test]
    fn voices_keep_their_tones_apart() {
        for k in 1..=5 {
            let c = UtteranceCorpus::synthetic(k, 1, 16_000, 4);
            let offsets: Vec<f64> = c.voices.iter().map(|v| v.tone_offset_hz).collect();
            for w in offsets.windows(2) {
                assert!(w[1] - w[0] >= 0.8 * 2.0 * MAX_TONE_OFFSET_HZ / k as f64);
            }
            assert!(offsets.iter().all(|o| o.abs() <= MAX_TONE_OFFSET_HZ));
        }
    }

    #[test]
    fn corpus_is_deterministic_and_bounded() {
        let a = UtteranceCorpus::synthetic(3, 4, 16_000, 9);
        let b = UtteranceCorpus::synthetic(3, 4, 16_000, 9);
        assert_eq!(a, b);
        assert_eq!(a.utterances.len(), 12);
        for u in &a.utterances {
            assert!(u.samples.iter().all(|x| x.is_finite() && x.abs() < 2.0));
            assert!(u.words.windows(2).all(|w| w[0].end < w[1].start));
            assert_eq!(u.words.last().unwrap().end, u.samples.len());
        }
    }
}
