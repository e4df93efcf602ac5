//! Toy two-stage training on freshly synthesised meetings.

use std::path::Path;

use anyhow::{bail, Result};
use meetsep_core::audio::StftConfig;
use meetsep_core::synth::{gen_meeting, MeetingSpec, UtteranceCorpus};
use meetsep_core::tsnet::{
    prepare_examples, save_checkpoint_file, train_two_stage, Checkpoint, EmbeddingProjection, FeatureNormalizer, NetworkConfig,
    TrainSchedule, TrainingData, TsNet,
};
use serde::{Deserialize, Serialize};

pub const LOSS_CSV: &str = "loss_curves.csv";
pub const CONVERTED_CHECKPOINT: &str = "converted.ckpt";
pub const FINAL_CHECKPOINT: &str = "model.ckpt";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyTrainingConfig {
    pub sample_rate: u32,
    pub speakers: usize,
    pub train_meetings: usize,
    pub train_secs: f64,
    pub valid_secs: f64,
    pub overlap_ratio: f64,
    pub snr_db: f64,
    pub window_length: usize,
    pub shift: usize,
    pub n_mels: usize,
    pub embedding_dim: usize,
    pub z1: usize,
    pub z2: usize,
    pub hidden: [usize; 3],
    pub schedule: TrainSchedule,
}

impl Default for ToyTrainingConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            speakers: 2,
            train_meetings: 3,
            train_secs: 16.0,
            valid_secs: 8.0,
            overlap_ratio: 0.2,
            snr_db: 20.0,
            window_length: 128,
            shift: 64,
            n_mels: 16,
            embedding_dim: 16,
            z1: 32,
            z2: 32,
            hidden: [32; 3],
            schedule: TrainSchedule { n_mels: 16, ..TrainSchedule::default() },
        }
    }
}

impl ToyTrainingConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        self.network(0).validate()?;
        self.stft()?;
        if self.train_meetings == 0 || self.speakers == 0 {
            bail!("toy training needs at least one meeting and one speaker");
        }
        if self.schedule.n_mels != self.n_mels {
            bail!("schedule uses {} mel bands, features {}", self.schedule.n_mels, self.n_mels);
        }
        Ok(())
    }

    pub fn stft(&self) -> Result<StftConfig> {
        Ok(StftConfig::new(self.window_length, self.shift)?)
    }

    pub fn network(&self, seed: u64) -> NetworkConfig {
        let bins = self.window_length / 2 + 1;
        NetworkConfig {
            bins,
            input_dim: bins + self.n_mels,
            speakers: self.speakers,
            embedding_dim: self.embedding_dim,
            z1: self.z1,
            z2: self.z2,
            hidden: self.hidden,
            seed,
        }
    }

    fn meeting(&self, secs: f64, seed: u64) -> MeetingSpec {
        MeetingSpec {
            num_speakers: self.speakers,
            duration_secs: secs,
            target_overlap_ratio: self.overlap_ratio,
            snr_db: self.snr_db,
            num_channels: 1,
            seed,
            sample_rate: self.sample_rate,
            array_radius_m: 0.1,
        }
    }

    /// Training and validation chunks for `seed`; validation meetings use
    /// held-out utterances of the same voices.
    pub fn data(&self, seed: u64) -> Result<TrainingData<f32>> {
        self.validate()?;
        let corpus = UtteranceCorpus::synthetic(self.speakers, 12, self.sample_rate, seed ^ 0x7a11);
        let train = (0..self.train_meetings)
            .map(|i| gen_meeting::<f32>(&self.meeting(self.train_secs, seed.wrapping_mul(31).wrapping_add(i as u64 + 1)), &corpus))
            .collect::<meetsep_core::Result<Vec<_>>>()?;
        let valid = vec![gen_meeting::<f32>(&self.meeting(self.valid_secs, seed.wrapping_mul(31).wrapping_add(1_000)), &corpus)?];
        let stft = self.stft()?;
        let normalizer = FeatureNormalizer::fit(&train, &stft, self.n_mels)?;
        let net = self.network(seed);
        let projection = EmbeddingProjection::new(net.input_dim, net.embedding_dim, net.seed);
        let chunk = self.schedule.chunk_secs;
        Ok(TrainingData {
            train: prepare_examples(&train, &normalizer, &stft, self.n_mels, chunk, &projection)?,
            valid: prepare_examples(&valid, &normalizer, &stft, self.n_mels, chunk, &projection)?,
            normalizer,
            stft,
            n_mels: self.n_mels,
        })
    }
}

/// Both stages from scratch, returning the state right after conversion and
/// the final state.
pub fn train_toy(cfg: &ToyTrainingConfig, seed: u64) -> Result<(Checkpoint<f32>, Checkpoint<f32>)> {
    let data = cfg.data(seed)?;
    let schedule = TrainSchedule { seed, ..cfg.schedule.clone() };
    let model = TsNet::<f32>::new_vad(cfg.network(seed))?;
    let converted = train_two_stage(Checkpoint::new(model, schedule.learning_rate), &data, &schedule, Some(schedule.vad_steps))?;
    let last = train_two_stage(converted.clone(), &data, &schedule, None)?;
    Ok((converted, last))
}

/// Trains and writes both checkpoints and the loss curves to `out_dir`.
pub fn cmd_train_toy(cfg: &ToyTrainingConfig, seed: u64, out_dir: &Path) -> Result<Checkpoint<f32>> {
    let (converted, last) = train_toy(cfg, seed)?;
    std::fs::create_dir_all(out_dir)?;
    save_checkpoint_file(&out_dir.join(CONVERTED_CHECKPOINT), &converted)?;
    save_checkpoint_file(&out_dir.join(FINAL_CHECKPOINT), &last)?;
    std::fs::write(out_dir.join(LOSS_CSV), last.log.to_csv())?;
    Ok(last)
}
