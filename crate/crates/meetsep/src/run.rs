//! The separation chain: masks, activity, segments, optional GSS, extraction.

use std::path::Path;

use anyhow::{bail, Context, Result};
use meetsep_core::audio::wav::{write_wav, WavEncoding};
use meetsep_core::audio::{compute_stats, log_features, stft, synthesize_frames, MomentStats, SpectrogramTensor, StftConfig, WaveformBlock};
use meetsep_core::beamform::{apply_beamformer, estimate_covariances_weighted, extract_with_mask_floor, mask_multiply, mvdr_souden};
use meetsep_core::gss::run_gss;
use meetsep_core::io::{format_rttm, write_real, RttmTurn};
use meetsep_core::mask::{
    activity_to_segments, channel_median_fusion, mask_to_activity, oracle_irm, threshold_close, ActivityEstimate,
    BinaryActivity, MaskTensor, Segment,
};
use meetsep_core::synth::frame_activity;
use meetsep_core::tsnet::{embed_speakers, load_checkpoint_file, EmbeddingProjection, Head, TsNet};
use meetsep_core::MeetingRecordF32;
use ndarray::{s, Array1, Array2, Axis};
use num_complex::Complex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ActivitySource, ChannelPolicy, Dereverberation, MaskSource, PipelineConfig};
use crate::meeting::{read_meeting, speaker_label, RTTM_FILE};

pub const MASK_FILE: &str = "masks.tsep";
pub const SEGMENTS_FILE: &str = "segments.json";

/// One separated region as listed in `segments.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub id: usize,
    pub speaker: String,
    pub start_frame: usize,
    pub end_frame: usize,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub segments: Vec<Segment>,
    /// Fused mask that drove the activity estimate, `frames x bins x speakers`.
    pub masks: MaskTensor<f32>,
    pub activity: BinaryActivity,
    /// One full-length separated signal per speaker.
    pub tracks: Vec<Vec<f32>>,
    pub sample_rate: u32,
}

/// Sample range `[start, end)` owned by frames `[s, e)`: each frame owns the
/// `shift` samples around its centre.
pub fn frame_range_to_samples(cfg: &StftConfig, start: usize, end: usize, len: usize) -> (usize, usize) {
    let offset = (cfg.window_length - cfg.shift) / 2;
    let at = |t: usize| (t * cfg.shift).saturating_sub(offset).min(len);
    (at(start), at(end))
}

impl RunOutput {
    pub fn segment_records(&self, cfg: &StftConfig) -> Vec<SegmentRecord> {
        let len = self.tracks.first().map_or(0, Vec::len);
        let sr = f64::from(self.sample_rate);
        self.segments
            .iter()
            .map(|seg| {
                let (a, b) = frame_range_to_samples(cfg, seg.start, seg.end, len);
                SegmentRecord {
                    id: seg.id,
                    speaker: speaker_label(seg.speaker),
                    start_frame: seg.start,
                    end_frame: seg.end,
                    start: a as f64 / sr,
                    end: b as f64 / sr,
                }
            })
            .collect()
    }

    pub fn rttm(&self, cfg: &StftConfig, session: &str) -> Vec<RttmTurn> {
        self.segment_records(cfg)
            .into_iter()
            .filter(|r| r.end > r.start)
            .map(|r| RttmTurn { session: session.to_string(), start: r.start, duration: r.end - r.start, speaker: r.speaker })
            .collect()
    }
}

fn restrict_channels(record: &MeetingRecordF32, max: Option<usize>) -> MeetingRecordF32 {
    let d = max.map_or(record.channels(), |m| m.min(record.channels()));
    if d == record.channels() {
        return record.clone();
    }
    let mut out = record.clone();
    out.mixture.samples = record.mixture.samples.slice(s![..d, ..]).to_owned();
    out.images = record.images.iter().map(|i| i.slice(s![..d, ..]).to_owned()).collect();
    out.noise = record.noise.slice(s![..d, ..]).to_owned();
    out
}

/// Dereverberation hook; no method is implemented, so the signal passes through.
fn dereverberate(mixture: &WaveformBlock<f32>, method: Dereverberation) -> WaveformBlock<f32> {
    match method {
        Dereverberation::None => mixture.clone(),
    }
}

fn mask_channels(policy: ChannelPolicy, channels: usize) -> Vec<usize> {
    match policy {
        ChannelPolicy::Single => vec![0],
        ChannelPolicy::MultiMedian => (0..channels).collect(),
    }
}

fn oracle_masks(record: &MeetingRecordF32, spec: &SpectrogramTensor<f32>, cfg: &PipelineConfig) -> Result<MaskTensor<f32>> {
    let images = record
        .images
        .par_iter()
        .map(|img| stft(&WaveformBlock { samples: img.clone(), sample_rate: record.sample_rate() }, &cfg.stft))
        .collect::<meetsep_core::Result<Vec<_>>>()?;
    let per_channel = mask_channels(cfg.channel_policy, spec.channels())
        .into_iter()
        .map(|d| oracle_irm(&images, spec, d))
        .collect::<meetsep_core::Result<Vec<_>>>()?;
    Ok(channel_median_fusion(&per_channel)?)
}

fn model_masks(record: &MeetingRecordF32, spec: &SpectrogramTensor<f32>, cfg: &PipelineConfig, checkpoint: &Path) -> Result<MaskTensor<f32>> {
    let ckpt = load_checkpoint_file::<f32>(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    let model: TsNet<f32> = ckpt.model;
    if model.head != Head::Sep {
        bail!("checkpoint {} holds a VAD network; masks need the SEP head", checkpoint.display());
    }
    let net = &model.config;
    if net.bins != spec.bins() || net.input_dim <= net.bins {
        bail!("network expects {} bins, pipeline STFT gives {}", net.bins, spec.bins());
    }
    if net.speakers != record.speakers() {
        bail!("network handles {} speakers, meeting has {}", net.speakers, record.speakers());
    }
    let n_mels = net.input_dim - net.bins;
    let projection = EmbeddingProjection::new(net.input_dim, net.embedding_dim, net.seed);
    let oracle = frame_activity(&record.activities, &cfg.stft);
    let per_channel = mask_channels(cfg.channel_policy, spec.channels())
        .into_iter()
        .map(|d| {
            let raw = log_features(spec, d, n_mels)?;
            let stats = compute_stats(&[&raw])?;
            let unit = MomentStats { mean: Array1::zeros(raw.dims()), std: Array1::ones(raw.dims()) };
            let feats = stats.moment_match(&raw, &unit)?;
            let embeddings = embed_speakers(&feats, &oracle, &projection)?;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (d as u64).wrapping_mul(0x9e37_79b9));
            let probs = model.permutation_average_forward(feats.values.view(), &embeddings, &mut rng)?;
            MaskTensor::new(model.as_time_frequency(probs)?)
        })
        .collect::<meetsep_core::Result<Vec<_>>>()?;
    Ok(channel_median_fusion(&per_channel)?)
}

fn local_spec(spec: &SpectrogramTensor<f32>, seg: &Segment) -> SpectrogramTensor<f32> {
    SpectrogramTensor { values: spec.values.slice(s![seg.start..seg.end, .., ..]).to_owned(), config: spec.config, sample_rate: spec.sample_rate }
}

/// Target and distortion weights of `seg`, `segment frames x bins`.
fn segment_weights(
    spec: &SpectrogramTensor<f32>,
    masks: &MaskTensor<f32>,
    guide: &BinaryActivity,
    seg: &Segment,
    cfg: &PipelineConfig,
) -> Result<(Array2<f32>, Array2<f32>)> {
    let eps = cfg.extraction.epsilon as f32;
    match cfg.effective_gss() {
        Some(gss) => {
            let out = run_gss(spec, guide, Some(masks), seg, &gss)?;
            let target = out.speaker_mask(seg.speaker).mapv(|v| v.clamp(0.0, 1.0));
            // everything the target class does not explain, noise included
            let distortion = target.mapv(|v| (1.0 - v).max(eps));
            Ok((target, distortion))
        }
        None => {
            let local = masks.values.slice(s![seg.start..seg.end, .., ..]);
            let target = local.index_axis(Axis(2), seg.speaker).to_owned();
            let distortion = (&local.sum_axis(Axis(2)) - &target).mapv(|v| v.max(eps));
            Ok((target, distortion))
        }
    }
}

fn extract_segment(
    spec: &SpectrogramTensor<f32>,
    masks: &MaskTensor<f32>,
    guide: &BinaryActivity,
    seg: &Segment,
    cfg: &PipelineConfig,
) -> Result<(isize, Vec<f32>)> {
    let (target, distortion) = segment_weights(spec, masks, guide, seg, cfg)?;
    let local = local_spec(spec, seg);
    let local_seg = Segment { id: seg.id, speaker: 0, start: 0, end: seg.len() };
    let local_mask = MaskTensor::new(target.clone().insert_axis(Axis(2)))?;
    let reference = cfg.extraction.ref_channel;
    let single = cfg.channel_policy == ChannelPolicy::Single || spec.channels() == 1;
    let z: Array2<Complex<f32>> = if single {
        mask_multiply(&local, &local_mask, 0, if spec.channels() == 1 { 0 } else { reference })?
    } else {
        let cov = estimate_covariances_weighted(&local, target.view(), distortion.view(), &local_seg)?;
        let weights = mvdr_souden(&cov, reference)?;
        if cfg.extraction.mask_floor >= 1.0 {
            apply_beamformer(&weights, &local, &local_seg)?
        } else {
            extract_with_mask_floor(&weights, &local, &local_mask, &local_seg, &cfg.extraction)?
        }
    };
    Ok(synthesize_frames(&cfg.stft, z.view(), seg.start, spec.frames()))
}

/// Runs the chain on an in-memory meeting.
pub fn separate(record: &MeetingRecordF32, cfg: &PipelineConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let record = restrict_channels(record, cfg.max_channels);
    if cfg.extraction.ref_channel >= record.channels() {
        bail!("reference channel {} of {}", cfg.extraction.ref_channel, record.channels());
    }
    let mixture = dereverberate(&record.mixture, cfg.dereverberation);
    let spec = stft(&mixture, &cfg.stft)?;
    let masks = match &cfg.mask_source {
        MaskSource::Oracle => oracle_masks(&record, &spec, cfg)?,
        MaskSource::Model { checkpoint } => model_masks(&record, &spec, cfg, checkpoint)?,
    };
    let (activity, soft) = match cfg.activity_source {
        ActivitySource::Mask => {
            let soft = mask_to_activity(&masks);
            (threshold_close(&soft, &cfg.segmentation)?, soft)
        }
        ActivitySource::Oracle => {
            let bin = frame_activity(&record.activities, &cfg.stft);
            let soft = ActivityEstimate { values: bin.values.mapv(|a| if a { 1.0f32 } else { 0.0 }) };
            (bin, soft)
        }
    };
    let segments = activity_to_segments(&activity, &soft, &cfg.segmentation)?;
    let pieces = segments
        .par_iter()
        .map(|seg| {
            extract_segment(&spec, &masks, &activity, seg, cfg)
                .with_context(|| format!("segment {} (speaker {}, frames {}..{})", seg.id, seg.speaker, seg.start, seg.end))
        })
        .collect::<Result<Vec<_>>>()?;
    let len = record.len();
    let mut tracks = vec![vec![0f32; len]; record.speakers()];
    for (seg, (start, samples)) in segments.iter().zip(pieces) {
        let track = &mut tracks[seg.speaker];
        for (i, v) in samples.into_iter().enumerate() {
            let p = start + i as isize;
            if p >= 0 && (p as usize) < len {
                track[p as usize] += v;
            }
        }
    }
    Ok(RunOutput { segments, masks, activity, tracks, sample_rate: record.sample_rate() })
}

/// Writes one WAV per speaker, the RTTM, the mask tensor and the segment list.
pub fn write_run(out_dir: &Path, output: &RunOutput, cfg: &PipelineConfig, session: &str) -> Result<()> {
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    for (k, track) in output.tracks.iter().enumerate() {
        let wave = WaveformBlock::mono(track.clone(), output.sample_rate)?;
        write_wav(out_dir.join(format!("{}.wav", speaker_label(k))), &wave, WavEncoding::Float32)?;
    }
    std::fs::write(out_dir.join(RTTM_FILE), format_rttm(&output.rttm(&cfg.stft, session)))?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(out_dir.join(MASK_FILE))?);
    write_real(&mut f, output.masks.values.view().into_dyn())?;
    std::io::Write::flush(&mut f)?;
    std::fs::write(out_dir.join(SEGMENTS_FILE), serde_json::to_string_pretty(&output.segment_records(&cfg.stft))? + "\n")?;
    Ok(())
}

/// Separates the meeting stored in `meeting_dir` into `out_dir`.
pub fn cmd_run(cfg: &PipelineConfig, meeting_dir: &Path, out_dir: &Path) -> Result<RunOutput> {
    let (manifest, record) = read_meeting(meeting_dir)?;
    let output = separate(&record, cfg)?;
    write_run(out_dir, &output, cfg, &manifest.session)?;
    Ok(output)
}
