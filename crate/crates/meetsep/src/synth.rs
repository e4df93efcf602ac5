use std::path::Path;

use anyhow::Result;
use meetsep_core::synth::{gen_meeting, MeetingSpec, UtteranceCorpus};
use meetsep_core::MeetingRecordF32;

use crate::meeting::{write_meeting, Manifest};

/// Generates the meeting described by `spec` from a corpus seeded alongside it.
pub fn synthesize(spec: &MeetingSpec, utterances_per_speaker: usize) -> Result<MeetingRecordF32> {
    let corpus = UtteranceCorpus::synthetic(spec.num_speakers, utterances_per_speaker, spec.sample_rate, spec.seed ^ 0xc0de);
    Ok(gen_meeting(spec, &corpus)?)
}

pub fn cmd_synth(spec: &MeetingSpec, utterances_per_speaker: usize, out_dir: &Path) -> Result<Manifest> {
    let record = synthesize(spec, utterances_per_speaker)?;
    let session = out_dir.file_name().and_then(|n| n.to_str()).unwrap_or("session").to_string();
    write_meeting(out_dir, &record, &session)
}
