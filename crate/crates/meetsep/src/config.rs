use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use meetsep_core::audio::StftConfig;
use meetsep_core::beamform::ExtractionParams;
use meetsep_core::gss::{GssConfig, InitMode};
use meetsep_core::mask::SegmentationParams;
use meetsep_core::synth::MeetingSpec;
use serde::{Deserialize, Serialize};

use crate::train::ToyTrainingConfig;

/// Where the time-frequency masks come from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum MaskSource {
    /// Ideal ratio masks from the reference images.
    Oracle,
    /// A trained SEP checkpoint.
    Model { checkpoint: PathBuf },
}

/// Where the diarization (frame activity) comes from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActivitySource {
    /// Thresholded and closed mask activity.
    #[default]
    Mask,
    /// Reference activity from the meeting manifest.
    Oracle,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChannelPolicy {
    /// Reference channel only: mask multiplication, no beamforming.
    Single,
    /// Masks per channel fused by the median, MVDR over all channels.
    #[default]
    MultiMedian,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum GssMode {
    Off,
    TInit,
    #[default]
    TfInit,
}

/// Dereverberation stage in front of mask estimation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Dereverberation {
    #[default]
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub stft: StftConfig,
    pub segmentation: SegmentationParams,
    pub extraction: ExtractionParams,
    pub gss_mode: GssMode,
    pub gss: GssConfig,
    pub mask_source: MaskSource,
    pub activity_source: ActivitySource,
    pub channel_policy: ChannelPolicy,
    /// Restrict processing to the first `n` microphones.
    pub max_channels: Option<usize>,
    pub dereverberation: Dereverberation,
    /// DER forgiveness collar in seconds.
    pub collar: f64,
    pub synth: MeetingSpec,
    pub corpus_utterances_per_speaker: usize,
    pub training: ToyTrainingConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            stft: StftConfig::default(),
            segmentation: SegmentationParams::default(),
            extraction: ExtractionParams::default(),
            gss_mode: GssMode::TfInit,
            gss: GssConfig::default(),
            mask_source: MaskSource::Oracle,
            activity_source: ActivitySource::Mask,
            channel_policy: ChannelPolicy::MultiMedian,
            max_channels: None,
            dereverberation: Dereverberation::None,
            collar: 0.25,
            synth: MeetingSpec::default(),
            corpus_utterances_per_speaker: 40,
            training: ToyTrainingConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: Self = serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.stft.validate()?;
        self.segmentation.validate()?;
        self.extraction.validate()?;
        self.gss.validate()?;
        self.synth.validate()?;
        self.training.validate()?;
        if !(self.collar >= 0.0) {
            bail!("collar {} must be non-negative", self.collar);
        }
        if self.max_channels == Some(0) {
            bail!("max_channels must be at least 1");
        }
        if let MaskSource::Model { checkpoint } = &self.mask_source {
            if !checkpoint.is_file() {
                bail!("mask checkpoint {} does not exist", checkpoint.display());
            }
        }
        Ok(())
    }

    /// The GSS settings implied by `gss_mode`, or `None` when disabled.
    pub fn effective_gss(&self) -> Option<GssConfig> {
        let init_mode = match self.gss_mode {
            GssMode::Off => return None,
            GssMode::TInit => InitMode::TInit,
            GssMode::TfInit => InitMode::TfInit,
        };
        Some(GssConfig { init_mode, ..self.gss.clone() })
    }
}
