//! Scoring of a hypothesis directory against a reference meeting directory.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use meetsep_core::audio::wav::read_wav;
use meetsep_core::audio::WaveformBlock;
use meetsep_core::io::{parse_rttm, RttmTurn};
use meetsep_core::metrics::{cpwer, der, di_cpwer, DiMode, ErrorCounts, HypothesisOutput, SpeakerTurn, TimedWords};
use serde::{Deserialize, Serialize};

use crate::meeting::{read_manifest, Manifest, MANIFEST_FILE, RTTM_FILE};
use crate::recognize::{recognize, RecognizerParams};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DerReport {
    pub missed: f64,
    pub false_alarm: f64,
    pub confusion: f64,
    pub reference_time: f64,
    pub rate: f64,
}

impl DerReport {
    fn add(&mut self, other: &DerReport) {
        self.missed += other.missed;
        self.false_alarm += other.false_alarm;
        self.confusion += other.confusion;
        self.reference_time += other.reference_time;
        self.rate = if self.reference_time > 0.0 { (self.missed + self.false_alarm + self.confusion) / self.reference_time } else { 0.0 };
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WerReport {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub reference_words: usize,
    pub rate: f64,
}

impl From<ErrorCounts> for WerReport {
    fn from(c: ErrorCounts) -> Self {
        Self { substitutions: c.substitutions, deletions: c.deletions, insertions: c.insertions, reference_words: c.reference_words, rate: c.rate() }
    }
}

impl WerReport {
    fn add(&mut self, other: &WerReport) {
        self.substitutions += other.substitutions;
        self.deletions += other.deletions;
        self.insertions += other.insertions;
        self.reference_words += other.reference_words;
        let errors = self.substitutions + self.deletions + self.insertions;
        self.rate = errors as f64 / self.reference_words.max(1) as f64;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeetingReport {
    pub session: String,
    /// Overlap condition label, `OV<percent>` rounded to ten percent.
    pub condition: String,
    pub overlap_ratio: f64,
    pub der: DerReport,
    pub cpwer: WerReport,
    pub di_cpwer: WerReport,
    /// Reference speaker matched to each hypothesis speaker label.
    pub speaker_mapping: BTreeMap<String, Option<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub condition: String,
    pub meetings: usize,
    pub der: DerReport,
    pub cpwer: WerReport,
    pub di_cpwer: WerReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub collar: f64,
    pub overall: ConditionReport,
    pub per_condition: Vec<ConditionReport>,
    pub meetings: Vec<MeetingReport>,
}

pub fn overlap_condition(ratio: f64) -> String {
    format!("OV{}", ((ratio * 10.0).round() as u32) * 10)
}

/// Hypothesis speakers in first-appearance order of their labels, sorted.
fn speaker_indices(turns: &[RttmTurn]) -> BTreeMap<String, usize> {
    let labels: std::collections::BTreeSet<&str> = turns.iter().map(|t| t.speaker.as_str()).collect();
    labels.into_iter().enumerate().map(|(i, l)| (l.to_string(), i)).collect()
}

/// Transcribes every hypothesis turn from the `<speaker>.wav` next to the RTTM.
pub fn transcribe_turns(hyp_dir: &Path, turns: &[RttmTurn], params: &RecognizerParams) -> Result<HypothesisOutput> {
    let index = speaker_indices(turns);
    let mut audio: BTreeMap<String, WaveformBlock<f32>> = BTreeMap::new();
    let mut segments = Vec::with_capacity(turns.len());
    for turn in turns {
        if !audio.contains_key(&turn.speaker) {
            let path = hyp_dir.join(format!("{}.wav", turn.speaker));
            let wave: WaveformBlock<f32> = read_wav(&path).with_context(|| format!("reading {}", path.display()))?;
            audio.insert(turn.speaker.clone(), wave);
        }
        let wave = &audio[&turn.speaker];
        let sr = f64::from(wave.sample_rate);
        let a = ((turn.start * sr).round().max(0.0) as usize).min(wave.len());
        let b = ((turn.end() * sr).round().max(0.0) as usize).min(wave.len());
        let samples: Vec<f32> = wave.samples.row(0).slice(ndarray::s![a..b]).to_vec();
        let words = recognize(&samples, wave.sample_rate, params)?;
        segments.push(TimedWords {
            speaker: index[&turn.speaker],
            start: turn.start,
            end: turn.end(),
            words: words.into_iter().map(|w| w.label).collect(),
        });
    }
    Ok(HypothesisOutput { segments })
}

/// Scores one meeting.
pub fn evaluate_meeting(manifest: &Manifest, hyp_dir: &Path, collar: f64, params: &RecognizerParams) -> Result<MeetingReport> {
    let rttm_path = hyp_dir.join(RTTM_FILE);
    let text = std::fs::read_to_string(&rttm_path).with_context(|| format!("missing hypothesis {}", rttm_path.display()))?;
    let turns: Vec<RttmTurn> = parse_rttm(&text)?.into_iter().filter(|t| t.session == manifest.session).collect();
    let index = speaker_indices(&turns);
    let hyp_turns: Vec<SpeakerTurn> =
        turns.iter().map(|t| SpeakerTurn { speaker: index[&t.speaker], start: t.start, end: t.end() }).collect();
    let d = der(&manifest.reference_turns(), &hyp_turns, collar)?;
    let reference = manifest.reference_transcript();
    let hypothesis = transcribe_turns(hyp_dir, &turns, params)?;
    let cp = cpwer(&reference, &hypothesis);
    let di = di_cpwer(&reference, &hypothesis, DiMode::Heuristic)?;
    let mut speaker_mapping = BTreeMap::new();
    for (label, &i) in &index {
        let matched = cp.assignment.iter().find(|(_, h)| *h == Some(i)).and_then(|(r, _)| *r);
        speaker_mapping.insert(label.clone(), matched);
    }
    Ok(MeetingReport {
        session: manifest.session.clone(),
        condition: overlap_condition(manifest.overlap_ratio),
        overlap_ratio: manifest.overlap_ratio,
        der: DerReport { missed: d.missed, false_alarm: d.false_alarm, confusion: d.confusion, reference_time: d.reference_time, rate: d.rate() },
        cpwer: cp.counts.into(),
        di_cpwer: di.counts.into(),
        speaker_mapping,
    })
}

fn aggregate(condition: &str, meetings: &[&MeetingReport]) -> ConditionReport {
    let mut out = ConditionReport {
        condition: condition.to_string(),
        meetings: meetings.len(),
        der: DerReport::default(),
        cpwer: WerReport::default(),
        di_cpwer: WerReport::default(),
    };
    for m in meetings {
        out.der.add(&m.der);
        out.cpwer.add(&m.cpwer);
        out.di_cpwer.add(&m.di_cpwer);
    }
    out
}

/// Pairs of (reference, hypothesis) meeting directories. A directory holding
/// a manifest is one meeting; otherwise every subdirectory with a manifest is
/// matched to the same-named hypothesis subdirectory.
fn meeting_pairs(ref_dir: &Path, hyp_dir: &Path) -> Result<Vec<(std::path::PathBuf, std::path::PathBuf)>> {
    if ref_dir.join(MANIFEST_FILE).is_file() {
        return Ok(vec![(ref_dir.to_path_buf(), hyp_dir.to_path_buf())]);
    }
    let mut names: Vec<_> = std::fs::read_dir(ref_dir)
        .with_context(|| format!("reading {}", ref_dir.display()))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().join(MANIFEST_FILE).is_file())
        .map(|e| e.file_name())
        .collect();
    names.sort();
    if names.is_empty() {
        bail!("no meeting manifest under {}", ref_dir.display());
    }
    Ok(names.into_iter().map(|n| (ref_dir.join(&n), hyp_dir.join(&n))).collect())
}

pub fn cmd_eval(ref_dir: &Path, hyp_dir: &Path, collar: f64) -> Result<EvalReport> {
    let params = RecognizerParams::default();
    let meetings = meeting_pairs(ref_dir, hyp_dir)?
        .into_iter()
        .map(|(r, h)| evaluate_meeting(&read_manifest(&r)?, &h, collar, &params))
        .collect::<Result<Vec<_>>>()?;
    let mut conditions: BTreeMap<String, Vec<&MeetingReport>> = BTreeMap::new();
    for m in &meetings {
        conditions.entry(m.condition.clone()).or_default().push(m);
    }
    let per_condition = conditions.iter().map(|(c, ms)| aggregate(c, ms)).collect();
    let all: Vec<&MeetingReport> = meetings.iter().collect();
    Ok(EvalReport { collar, overall: aggregate("all", &all), per_condition, meetings })
}

pub fn write_report(path: &Path, report: &EvalReport) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(report)? + "\n").with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}
