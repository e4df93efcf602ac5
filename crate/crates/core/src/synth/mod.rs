//! Synthetic multi-channel meetings with exact ground truth.

mod corpus;
mod spatial;

pub use corpus::{
    word_index, word_tone_pair, SourceUtterance, UtteranceCorpus, Voice, WordSpan, MAX_TONE_OFFSET_HZ, VOCABULARY, WORD_TONES,
};
pub use spatial::{spatialize, SpeakerSteering, SteeringModel};

use ndarray::{s, Array2, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::audio::{StftConfig, WaveformBlock, DEFAULT_SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::mask::BinaryActivity;
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MeetingSpec {
    pub num_speakers: usize,
    pub duration_secs: f64,
    pub target_overlap_ratio: f64,
    pub snr_db: f64,
    pub num_channels: usize,
    pub seed: u64,
    pub sample_rate: u32,
    pub array_radius_m: f64,
}

impl Default for MeetingSpec {
    fn default() -> Self {
        Self {
            num_speakers: 2,
            duration_secs: 30.0,
            target_overlap_ratio: 0.2,
            snr_db: 20.0,
            num_channels: 4,
            seed: 0,
            sample_rate: DEFAULT_SAMPLE_RATE,
            array_radius_m: 0.1,
        }
    }
}

impl MeetingSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_speakers == 0 {
            return Err(Error::Config("num_speakers must be at least 1".into()));
        }
        if self.num_channels == 0 {
            return Err(Error::Config("num_channels must be at least 1".into()));
        }
        if !(self.duration_secs > 0.0 && self.duration_secs.is_finite()) {
            return Err(Error::Config(format!("duration {} must be positive", self.duration_secs)));
        }
        if !(0.0..=1.0).contains(&self.target_overlap_ratio) {
            return Err(Error::Config(format!("overlap ratio {} outside [0, 1]", self.target_overlap_ratio)));
        }
        if !self.snr_db.is_finite() || self.sample_rate == 0 || !(self.array_radius_m >= 0.0) {
            return Err(Error::Config("snr, sample rate and array radius must be finite and valid".into()));
        }
        Ok(())
    }

    pub fn num_samples(&self) -> usize {
        (self.duration_secs * f64::from(self.sample_rate)).round() as usize
    }
}

/// Sample-level activity stored as sorted, disjoint `[start, end)` runs per speaker.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleActivity {
    pub len: usize,
    pub runs: Vec<Vec<(usize, usize)>>,
}

impl SampleActivity {
    pub fn silent(speakers: usize, len: usize) -> Self {
        Self { len, runs: vec![Vec::new(); speakers] }
    }

    pub fn speakers(&self) -> usize {
        self.runs.len()
    }

    /// Adds `[start, end)` for speaker `k`, merging touching runs.
    pub fn insert(&mut self, k: usize, start: usize, end: usize) {
        let end = end.min(self.len);
        if start >= end {
            return;
        }
        let runs = &mut self.runs[k];
        runs.push((start, end));
        runs.sort_unstable();
        let mut merged: Vec<(usize, usize)> = Vec::with_capacity(runs.len());
        for &(a, b) in runs.iter() {
            match merged.last_mut() {
                Some(last) if a <= last.1 => last.1 = last.1.max(b),
                _ => merged.push((a, b)),
            }
        }
        *runs = merged;
    }

    pub fn is_active(&self, k: usize, l: usize) -> bool {
        let runs = &self.runs[k];
        let i = runs.partition_point(|&(_, e)| e <= l);
        i < runs.len() && runs[i].0 <= l
    }

    pub fn to_dense(&self) -> Array2<bool> {
        let mut out = Array2::from_elem((self.speakers(), self.len), false);
        for (k, runs) in self.runs.iter().enumerate() {
            for &(a, b) in runs {
                out.slice_mut(s![k, a..b]).fill(true);
            }
        }
        out
    }

    /// Number of active speakers at every sample.
    pub fn count_profile(&self) -> Vec<u8> {
        let mut delta = vec![0i32; self.len + 1];
        for runs in &self.runs {
            for &(a, b) in runs {
                delta[a] += 1;
                delta[b] -= 1;
            }
        }
        let mut acc = 0i32;
        delta[..self.len]
            .iter()
            .map(|d| {
                acc += d;
                acc as u8
            })
            .collect()
    }

    /// Overlapped speech time over total speech time.
    pub fn overlap_ratio(&self) -> f64 {
        let profile = self.count_profile();
        let speech = profile.iter().filter(|&&c| c >= 1).count();
        let overlap = profile.iter().filter(|&&c| c >= 2).count();
        if speech == 0 {
            0.0
        } else {
            overlap as f64 / speech as f64
        }
    }

    pub fn union(&self, other: &Self) -> Result<Self> {
        if self.len != other.len || self.speakers() != other.speakers() {
            return Err(Error::Shape("activity shapes differ".into()));
        }
        let mut out = self.clone();
        for (k, runs) in other.runs.iter().enumerate() {
            for &(a, b) in runs {
                out.insert(k, a, b);
            }
        }
        Ok(out)
    }

    pub fn slice(&self, start: usize, end: usize) -> Self {
        let end = end.min(self.len);
        let start = start.min(end);
        let runs = self
            .runs
            .iter()
            .map(|runs| {
                runs.iter()
                    .filter_map(|&(a, b)| {
                        let (a, b) = (a.max(start), b.min(end));
                        (a < b).then(|| (a - start, b - start))
                    })
                    .collect()
            })
            .collect();
        Self { len: end - start, runs }
    }
}

/// Quantizes sample activity to frames: a frame is active when any active
/// sample falls inside its analysis span.
pub fn frame_activity(activity: &SampleActivity, cfg: &StftConfig) -> BinaryActivity {
    let frames = cfg.num_frames(activity.len);
    let mut out = BinaryActivity::zeros(frames, activity.speakers());
    let (w, sh, pad) = (cfg.window_length, cfg.shift, cfg.pad());
    for (k, runs) in activity.runs.iter().enumerate() {
        for &(a, b) in runs {
            // frame t covers [tS - pad, tS - pad + W): overlap iff tS > a + pad - W and tS < b + pad
            let lo = if a + pad + 1 > w { (a + pad - w) / sh + 1 } else { 0 };
            let hi = (b + pad).div_ceil(sh).min(frames);
            for t in lo..hi {
                out.values[[t, k]] = true;
            }
        }
    }
    out
}

/// One utterance as placed in a meeting; word times are meeting samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacedUtterance {
    pub speaker: usize,
    pub start: usize,
    pub end: usize,
    pub words: Vec<WordSpan>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeetingRecord<T> {
    pub mixture: WaveformBlock<T>,
    /// Per-speaker `channels x samples` source images.
    pub images: Vec<Array2<T>>,
    pub noise: Array2<T>,
    pub activities: SampleActivity,
    pub utterances: Vec<PlacedUtterance>,
    pub steering: SteeringModel,
    pub spec: MeetingSpec,
}

/// Sum of images in speaker order; the mixture is this plus the noise.
pub fn sum_images<T: Real>(images: &[Array2<T>], channels: usize, len: usize) -> Array2<T> {
    let mut acc = Array2::zeros((channels, len));
    for img in images {
        acc += img;
    }
    acc
}

impl<T: Real> MeetingRecord<T> {
    pub fn speakers(&self) -> usize {
        self.images.len()
    }

    pub fn channels(&self) -> usize {
        self.mixture.channels()
    }

    pub fn len(&self) -> usize {
        self.mixture.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mixture.is_empty()
    }

    pub fn sample_rate(&self) -> u32 {
        self.mixture.sample_rate
    }

    /// Reference word sequence of speaker `k` in temporal order.
    pub fn reference_words(&self, k: usize) -> Vec<String> {
        let mut utts: Vec<&PlacedUtterance> = self.utterances.iter().filter(|u| u.speaker == k).collect();
        utts.sort_by_key(|u| u.start);
        utts.iter().flat_map(|u| u.words.iter().map(|w| w.label.clone())).collect()
    }

    pub fn image_waveform(&self, k: usize) -> WaveformBlock<T> {
        WaveformBlock { samples: self.images[k].clone(), sample_rate: self.sample_rate() }
    }

    /// Samples `[start, end)` as a record of its own; utterances are clipped.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        let end = end.min(self.len());
        if start >= end {
            return Err(Error::EmptySegment { start, end });
        }
        let images = self.images.iter().map(|i| i.slice(s![.., start..end]).to_owned()).collect();
        let utterances = self
            .utterances
            .iter()
            .filter(|u| u.start < end && u.end > start)
            .map(|u| PlacedUtterance {
                speaker: u.speaker,
                start: u.start.max(start) - start,
                end: u.end.min(end) - start,
                words: u
                    .words
                    .iter()
                    .filter(|w| w.start >= start && w.end <= end)
                    .map(|w| WordSpan { label: w.label.clone(), start: w.start - start, end: w.end - start })
                    .collect(),
            })
            .collect();
        let mut spec = self.spec.clone();
        spec.duration_secs = (end - start) as f64 / f64::from(self.sample_rate());
        Ok(Self {
            mixture: WaveformBlock {
                samples: self.mixture.samples.slice(s![.., start..end]).to_owned(),
                sample_rate: self.sample_rate(),
            },
            images,
            noise: self.noise.slice(s![.., start..end]).to_owned(),
            activities: self.activities.slice(start, end),
            utterances,
            steering: self.steering.clone(),
            spec,
        })
    }
}

struct Placement {
    speaker: usize,
    utterance: usize,
    start: usize,
    /// Exclusive end including the propagation tail.
    end: usize,
}

/// Sequential placement steering the realised overlap towards the target.
fn place_utterances(
    spec: &MeetingSpec,
    corpus: &UtteranceCorpus,
    tail: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Placement>> {
    let total = spec.num_samples();
    let sr = f64::from(spec.sample_rate);
    let target = spec.target_overlap_ratio;
    let mut queues: Vec<Vec<usize>> = vec![Vec::new(); spec.num_speakers];
    for (i, u) in corpus.utterances.iter().enumerate() {
        if u.speaker < spec.num_speakers {
            queues[u.speaker].push(i);
        }
    }
    queues.iter_mut().for_each(|q| q.reverse());

    let mut placed: Vec<Placement> = Vec::new();
    let (mut speech, mut overlap) = (0f64, 0f64);
    let mut cursor = (rng.random_range(0.1..0.5) * sr) as usize;
    let mut exhausted = false;
    loop {
        let last = placed.last();
        let candidates: Vec<usize> = (0..spec.num_speakers)
            .filter(|&k| !queues[k].is_empty() && (spec.num_speakers == 1 || last.is_none_or(|p| p.speaker != k)))
            .collect();
        if candidates.is_empty() {
            exhausted = true;
            break;
        }
        let speaker = candidates[rng.random_range(0..candidates.len())];
        let utterance = *queues[speaker].last().expect("non-empty queue");
        let len = corpus.utterances[utterance].samples.len() + tail;

        let mut start = cursor;
        if let Some(prev) = last.filter(|p| p.speaker != speaker && target > 0.0) {
            // overlap that would put the running ratio exactly on target
            let wanted = (target * (speech + len as f64) - overlap) / (1.0 + target);
            let floor = placed.len().checked_sub(2).map_or(prev.start, |i| placed[i].end.max(prev.start));
            let room = (prev.end - floor).min(len - 1);
            let jitter = rng.random_range(0.8..1.2);
            let o = (wanted * jitter).clamp(0.0, room as f64) as usize;
            if o > 0 {
                start = prev.end - o;
            }
        }
        if start + len > total {
            break;
        }
        let o = last.map_or(0, |p| p.end.saturating_sub(start));
        overlap += o as f64;
        speech += (len - o) as f64;
        queues[speaker].pop();
        placed.push(Placement { speaker, utterance, start, end: start + len });
        cursor = start + len + (rng.random_range(0.05..0.4) * sr) as usize;
    }
    let reached = placed.last().map_or(0, |p| p.end);
    if exhausted && total.saturating_sub(reached) as f64 > 2.0 * sr {
        return Err(Error::CorpusTooSmall(format!(
            "utterances cover {:.1} s of a {:.1} s meeting",
            reached as f64 / sr,
            spec.duration_secs
        )));
    }
    Ok(placed)
}

/// Generates a meeting deterministically from `spec.seed`.
pub fn gen_meeting<T: Real>(spec: &MeetingSpec, corpus: &UtteranceCorpus) -> Result<MeetingRecord<T>> {
    spec.validate()?;
    if corpus.sample_rate != spec.sample_rate {
        return Err(Error::Config(format!(
            "corpus rate {} differs from meeting rate {}",
            corpus.sample_rate, spec.sample_rate
        )));
    }
    if corpus.speakers() < spec.num_speakers {
        return Err(Error::CorpusTooSmall(format!(
            "{} voices for {} speakers",
            corpus.speakers(),
            spec.num_speakers
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (k_total, d_total, len) = (spec.num_speakers, spec.num_channels, spec.num_samples());
    let steering =
        SteeringModel::circular_array(k_total, d_total, spec.array_radius_m, spec.sample_rate, &mut rng);
    let max_delay = steering.speakers.iter().flat_map(|s| s.delays.iter().cloned()).fold(0.0, f64::max);
    let tail = max_delay.ceil() as usize + 1;
    let placements = place_utterances(spec, corpus, tail, &mut rng)?;

    let mut images = vec![Array2::<T>::zeros((d_total, len)); k_total];
    let mut activities = SampleActivity::silent(k_total, len);
    let mut utterances = Vec::with_capacity(placements.len());
    for p in &placements {
        let src = &corpus.utterances[p.utterance];
        let mut track: Vec<T> = src.samples.iter().map(|&x| T::of(x)).collect();
        track.resize(p.end - p.start, T::zero());
        let img = spatialize(&track, &steering.speakers[p.speaker]);
        images[p.speaker].slice_mut(s![.., p.start..p.end]).zip_mut_with(&img, |a, &b| *a += b);
        activities.insert(p.speaker, p.start, p.end);
        utterances.push(PlacedUtterance {
            speaker: p.speaker,
            start: p.start,
            end: p.end,
            words: src
                .words
                .iter()
                .map(|w| WordSpan { label: w.label.clone(), start: p.start + w.start, end: p.start + w.end })
                .collect(),
        });
    }

    let speech = sum_images(&images, d_total, len);
    let power = speech.iter().map(|x| x.to_f64_lossy().powi(2)).sum::<f64>() / speech.len() as f64;
    let sigma = if power > 0.0 { (power / 10f64.powf(spec.snr_db / 10.0)).sqrt() } else { 1e-3 };
    let mut mixture = speech.clone();
    mixture.mapv_inplace(|x| x + T::of(sigma * rng.sample::<f64, _>(StandardNormal)));
    // stored noise is whatever the float sum added, so the additive model holds exactly
    let mut noise = mixture.clone();
    Zip::from(&mut noise).and(&speech).for_each(|n, &s| *n -= s);

    Ok(MeetingRecord {
        mixture: WaveformBlock::new(mixture, spec.sample_rate)?,
        images,
        noise,
        activities,
        utterances,
        steering,
        spec: spec.clone(),
    })
}

/// Superposition of two equally shaped chunks; activities are OR-combined.
pub fn mixup_superpose<T: Real>(a: &MeetingRecord<T>, b: &MeetingRecord<T>) -> Result<MeetingRecord<T>> {
    if a.len() != b.len() || a.channels() != b.channels() || a.speakers() != b.speakers() {
        return Err(Error::Shape(format!(
            "mixup of {}x{}x{} and {}x{}x{} records",
            a.speakers(),
            a.channels(),
            a.len(),
            b.speakers(),
            b.channels(),
            b.len()
        )));
    }
    let images: Vec<Array2<T>> = a.images.iter().zip(&b.images).map(|(x, y)| x + y).collect();
    let mixture = &a.mixture.samples + &b.mixture.samples;
    let speech = sum_images(&images, a.channels(), a.len());
    let noise = &mixture - &speech;
    let mut utterances = a.utterances.clone();
    utterances.extend(b.utterances.iter().cloned());
    utterances.sort_by_key(|u| (u.start, u.speaker));
    Ok(MeetingRecord {
        mixture: WaveformBlock { samples: mixture, sample_rate: a.sample_rate() },
        images,
        noise,
        activities: a.activities.union(&b.activities)?,
        utterances,
        steering: a.steering.clone(),
        spec: a.spec.clone(),
    })
}
