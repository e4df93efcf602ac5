//! Meeting directories: mixture, per-speaker images, manifest and reference RTTM.

use std::path::Path;

use anyhow::{bail, Context, Result};
use meetsep_core::audio::wav::{read_wav, write_wav, WavEncoding};
use meetsep_core::audio::WaveformBlock;
use meetsep_core::io::{format_rttm, RttmTurn};
use meetsep_core::metrics::{ReferenceTranscript, SpeakerTurn, TimedWords};
use meetsep_core::synth::{sum_images, MeetingSpec, PlacedUtterance, SampleActivity, SteeringModel};
use meetsep_core::MeetingRecordF32;
use serde::{Deserialize, Serialize};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MIXTURE_FILE: &str = "mixture.wav";
pub const RTTM_FILE: &str = "diarization.rttm";
pub const MANIFEST_VERSION: u32 = 1;

/// Speaker label used in RTTM files and as the WAV file stem.
pub fn speaker_label(k: usize) -> String {
    format!("spk{k}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub session: String,
    pub spec: MeetingSpec,
    pub sample_rate: u32,
    pub num_samples: usize,
    pub channels: usize,
    pub speakers: usize,
    /// Overlap ratio actually realised by the generator.
    pub overlap_ratio: f64,
    /// Per-speaker active sample runs `[start, end)`.
    pub activities: SampleActivity,
    pub utterances: Vec<PlacedUtterance>,
    pub steering: SteeringModel,
}

impl Manifest {
    pub fn describe(record: &MeetingRecordF32, session: &str) -> Self {
        Self {
            version: MANIFEST_VERSION,
            session: session.to_string(),
            spec: record.spec.clone(),
            sample_rate: record.sample_rate(),
            num_samples: record.len(),
            channels: record.channels(),
            speakers: record.speakers(),
            overlap_ratio: record.activities.overlap_ratio(),
            activities: record.activities.clone(),
            utterances: record.utterances.clone(),
            steering: record.steering.clone(),
        }
    }

    pub fn reference_turns(&self) -> Vec<SpeakerTurn> {
        let sr = f64::from(self.sample_rate);
        let mut turns: Vec<SpeakerTurn> = self
            .activities
            .runs
            .iter()
            .enumerate()
            .flat_map(|(k, runs)| runs.iter().map(move |&(a, b)| SpeakerTurn { speaker: k, start: a as f64 / sr, end: b as f64 / sr }))
            .collect();
        turns.sort_by(|a, b| a.start.total_cmp(&b.start).then(a.speaker.cmp(&b.speaker)));
        turns
    }

    pub fn reference_transcript(&self) -> ReferenceTranscript {
        let sr = f64::from(self.sample_rate);
        let mut utterances: Vec<TimedWords> = self
            .utterances
            .iter()
            .map(|u| TimedWords {
                speaker: u.speaker,
                start: u.start as f64 / sr,
                end: u.end as f64 / sr,
                words: u.words.iter().map(|w| w.label.clone()).collect(),
            })
            .collect();
        utterances.sort_by(|a, b| a.start.total_cmp(&b.start).then(a.speaker.cmp(&b.speaker)));
        ReferenceTranscript { utterances }
    }

    pub fn reference_rttm(&self) -> Vec<RttmTurn> {
        self.reference_turns()
            .iter()
            .map(|t| RttmTurn { session: self.session.clone(), start: t.start, duration: t.end - t.start, speaker: speaker_label(t.speaker) })
            .collect()
    }
}

/// Writes the mixture, one multi-channel image per speaker, the manifest and
/// the reference RTTM. Audio is stored as 32-bit float.
pub fn write_meeting(dir: &Path, record: &MeetingRecordF32, session: &str) -> Result<Manifest> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write_wav(dir.join(MIXTURE_FILE), &record.mixture, WavEncoding::Float32)?;
    for k in 0..record.speakers() {
        write_wav(dir.join(format!("{}.wav", speaker_label(k))), &record.image_waveform(k), WavEncoding::Float32)?;
    }
    let manifest = Manifest::describe(record, session);
    std::fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)? + "\n")?;
    std::fs::write(dir.join(RTTM_FILE), format_rttm(&manifest.reference_rttm()))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).with_context(|| format!("missing manifest {}", path.display()))?;
    let manifest: Manifest = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if manifest.version != MANIFEST_VERSION {
        bail!("manifest version {} is not supported", manifest.version);
    }
    Ok(manifest)
}

/// Reloads a meeting written by [`write_meeting`].
pub fn read_meeting(dir: &Path) -> Result<(Manifest, MeetingRecordF32)> {
    let manifest = read_manifest(dir)?;
    let mixture: WaveformBlock<f32> = read_wav(dir.join(MIXTURE_FILE)).with_context(|| format!("reading mixture in {}", dir.display()))?;
    if mixture.len() != manifest.num_samples || mixture.channels() != manifest.channels {
        bail!("mixture shape disagrees with the manifest");
    }
    let mut images = Vec::with_capacity(manifest.speakers);
    for k in 0..manifest.speakers {
        let img: WaveformBlock<f32> = read_wav(dir.join(format!("{}.wav", speaker_label(k))))?;
        if img.len() != manifest.num_samples || img.channels() != manifest.channels {
            bail!("image of speaker {k} disagrees with the manifest");
        }
        images.push(img.samples);
    }
    let noise = &mixture.samples - &sum_images(&images, manifest.channels, manifest.num_samples);
    let record = MeetingRecordF32 {
        mixture,
        images,
        noise,
        activities: manifest.activities.clone(),
        utterances: manifest.utterances.clone(),
        steering: manifest.steering.clone(),
        spec: manifest.spec.clone(),
    };
    Ok((manifest, record))
}

#[cfg(test)]
mod tests {
    use super::*;
    use meetsep_core::synth::{gen_meeting, UtteranceCorpus};

    #[test]
    fn meeting_round_trips_through_disk() {
        let spec = MeetingSpec { duration_secs: 4.0, num_channels: 2, sample_rate: 8_000, seed: 3, ..MeetingSpec::default() };
        let corpus = UtteranceCorpus::synthetic(2, 6, 8_000, 1);
        let record: MeetingRecordF32 = gen_meeting(&spec, &corpus).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let written = write_meeting(dir.path(), &record, "s0").unwrap();
        let (manifest, back) = read_meeting(dir.path()).unwrap();
        assert_eq!(manifest, written);
        assert_eq!(back, record);
        let turns = manifest.reference_turns();
        assert!(turns.windows(2).all(|w| w[0].start <= w[1].start));
        assert_eq!(manifest.reference_transcript().utterances.len(), record.utterances.len());
    }
}
