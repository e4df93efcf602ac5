use ndarray::{Array1, Array2, Array3};
use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{random_permutation, replicate_last_layer, sigmoid, Adam, Checkpoint, EmbeddingProjection, Head, SpeakerEmbeddingSet, TsNet};
use super::{embed_speakers, loss_bce, loss_logmae};
use crate::audio::{compute_stats, log_features, stft, FeatureTensor, MomentStats, StftConfig, WaveformBlock};
use crate::error::{Error, Result};
use crate::mask::BinaryActivity;
use crate::scalar::Real;
use crate::synth::{frame_activity, mixup_superpose, MeetingRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    /// Frame-level pretraining with BCE.
    Vad,
    /// Time-frequency fine-tuning with LogMAE after conversion.
    Sep,
    Done,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSchedule {
    pub vad_steps: usize,
    pub sep_steps: usize,
    pub batch_size: usize,
    pub chunk_secs: f64,
    /// Probability of superposing a second chunk of the same meeting.
    pub mixup_prob: f64,
    pub learning_rate: f64,
    pub n_mels: usize,
    pub seed: u64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self { vad_steps: 200, sep_steps: 200, batch_size: 8, chunk_secs: 2.0, mixup_prob: 0.5, learning_rate: 1e-3, n_mels: 16, seed: 0 }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || !(self.chunk_secs > 0.0) || self.n_mels == 0 {
            return Err(Error::Config("batch size, chunk length and mel count must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.mixup_prob) || !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!("mixup probability {} or learning rate {}", self.mixup_prob, self.learning_rate)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub stage: Stage,
    pub step: usize,
    pub validation: bool,
    pub loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub points: Vec<LossPoint>,
}

impl TrainingLog {
    /// Validation losses of `stage` in step order.
    pub fn validation(&self, stage: Stage) -> Vec<f64> {
        self.points.iter().filter(|p| p.validation && p.stage == stage).map(|p| p.loss).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("stage,step,split,loss\n");
        for p in &self.points {
            let stage = match p.stage {
                Stage::Vad => "vad",
                Stage::Sep => "sep",
                Stage::Done => "done",
            };
            let split = if p.validation { "valid" } else { "train" };
            out.push_str(&format!("{stage},{},{split},{:.9e}\n", p.step, p.loss));
        }
        out
    }
}

/// Maps raw log features to zero mean and unit variance per dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureNormalizer<T> {
    pub stats: MomentStats<T>,
}

impl<T: Real> FeatureNormalizer<T> {
    /// Statistics of the reference-channel features of `meetings`.
    pub fn fit(meetings: &[MeetingRecord<T>], cfg: &StftConfig, n_mels: usize) -> Result<Self> {
        let feats = meetings.iter().map(|m| raw_features(&m.mixture, cfg, n_mels).map(|(f, _)| f)).collect::<Result<Vec<_>>>()?;
        let refs: Vec<&FeatureTensor<T>> = feats.iter().collect();
        Ok(Self { stats: compute_stats(&refs)? })
    }

    pub fn apply(&self, features: &FeatureTensor<T>) -> Result<FeatureTensor<T>> {
        let dims = self.stats.mean.len();
        let unit = MomentStats { mean: Array1::zeros(dims), std: Array1::ones(dims) };
        self.stats.moment_match(features, &unit)
    }
}

fn raw_features<T: Real>(mixture: &WaveformBlock<T>, cfg: &StftConfig, n_mels: usize) -> Result<(FeatureTensor<T>, Array2<Complex<T>>)> {
    let mono = WaveformBlock::mono(mixture.samples.row(0).to_vec(), mixture.sample_rate)?;
    let spec = stft(&mono, cfg)?;
    Ok((log_features(&spec, 0, n_mels)?, spec.channel(0).to_owned()))
}

/// One training chunk and the embeddings of the meeting it came from.
#[derive(Debug, Clone)]
pub struct Example<T> {
    pub meeting: usize,
    pub chunk: MeetingRecord<T>,
    pub embeddings: SpeakerEmbeddingSet<T>,
}

/// Network inputs and targets of one (possibly superposed) chunk.
#[derive(Debug, Clone)]
pub struct TrainingItem<T> {
    pub features: Array2<T>,
    pub targets: BinaryActivity,
    /// Reference-channel mixture spectrum, `frames x bins`.
    pub mixture: Array2<Complex<T>>,
    /// Reference-channel speaker images, `speakers x samples`.
    pub sources: Array2<T>,
}

/// Everything the training loop reads besides the model.
#[derive(Debug, Clone)]
pub struct TrainingData<T> {
    pub train: Vec<Example<T>>,
    pub valid: Vec<Example<T>>,
    pub normalizer: FeatureNormalizer<T>,
    pub stft: StftConfig,
    pub n_mels: usize,
}

/// Cuts meetings into non-overlapping chunks; embeddings use whole meetings.
pub fn prepare_examples<T: Real>(
    meetings: &[MeetingRecord<T>],
    normalizer: &FeatureNormalizer<T>,
    cfg: &StftConfig,
    n_mels: usize,
    chunk_secs: f64,
    projection: &EmbeddingProjection<T>,
) -> Result<Vec<Example<T>>> {
    let mut out = Vec::new();
    for (i, meeting) in meetings.iter().enumerate() {
        let chunk = (chunk_secs * f64::from(meeting.sample_rate())).round() as usize;
        if chunk == 0 || chunk > meeting.len() {
            return Err(Error::Config(format!("chunk of {chunk} samples for a meeting of {}", meeting.len())));
        }
        let (raw, _) = raw_features(&meeting.mixture, cfg, n_mels)?;
        let feats = normalizer.apply(&raw)?;
        let embeddings = embed_speakers(&feats, &frame_activity(&meeting.activities, cfg), projection)?;
        for c in 0..meeting.len() / chunk {
            out.push(Example { meeting: i, chunk: meeting.slice(c * chunk, (c + 1) * chunk)?, embeddings: embeddings.clone() });
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyInput("training chunks"));
    }
    Ok(out)
}

impl<T: Real> TrainingData<T> {
    /// Inputs and targets of `example`, superposed with `partner` when given.
    pub fn item(&self, example: &Example<T>, partner: Option<&Example<T>>) -> Result<TrainingItem<T>> {
        let mixed;
        let rec = match partner {
            Some(p) => {
                mixed = mixup_superpose(&example.chunk, &p.chunk)?;
                &mixed
            }
            None => &example.chunk,
        };
        let (raw, mixture) = raw_features(&rec.mixture, &self.stft, self.n_mels)?;
        let features = self.normalizer.apply(&raw)?.values;
        let targets = frame_activity(&rec.activities, &self.stft);
        let mut sources = Array2::zeros((rec.speakers(), rec.len()));
        for (k, img) in rec.images.iter().enumerate() {
            sources.row_mut(k).assign(&img.row(0));
        }
        Ok(TrainingItem { features, targets, mixture, sources })
    }
}

fn step_seed(seed: u64, stage: Stage, step: usize) -> u64 {
    let s = match stage {
        Stage::Vad => 1u64,
        Stage::Sep => 2,
        Stage::Done => 3,
    };
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (s << 56) ^ step as u64
}

/// Loss of one item under permutation averaging and the gradient of that
/// loss accumulated into `grad`.
fn item_loss<T: Real>(
    model: &TsNet<T>,
    item: &TrainingItem<T>,
    embeddings: &SpeakerEmbeddingSet<T>,
    perms: [&[usize]; 2],
    cfg: &StftConfig,
    grad: Option<&mut TsNet<T>>,
) -> Result<f64> {
    let (l1, c1) = model.forward_slots(item.features.view(), embeddings, perms[0])?;
    let (l2, c2) = model.forward_slots(item.features.view(), embeddings, perms[1])?;
    let half = T::of(0.5);
    let avg = (model.slots_to_speakers(l1.view(), perms[0]) + model.slots_to_speakers(l2.view(), perms[1])) * half;
    let (loss, g) = match model.head {
        Head::Vad => loss_bce(avg.view(), item.targets.values.view())?,
        Head::Sep => {
            let masks: Array3<T> = model.as_time_frequency(avg.mapv(sigmoid))?;
            let (loss, gm) = loss_logmae(masks.view(), item.mixture.view(), item.sources.view(), cfg)?;
            let dlogit = &gm * &masks.mapv(|m| m * (T::one() - m));
            let cols = model.output_dim();
            (loss, dlogit.into_shape_with_order((masks.dim().0, cols)).map_err(|e| Error::Shape(e.to_string()))?)
        }
    };
    if let Some(grad) = grad {
        let g = g * half;
        model.backward(&c1, model.speakers_to_slots(g.view(), perms[0]).view(), grad);
        model.backward(&c2, model.speakers_to_slots(g.view(), perms[1]).view(), grad);
    }
    Ok(loss.to_f64_lossy())
}

/// Mean validation loss with fixed permutations (identity and reversed).
pub fn validation_loss<T: Real>(model: &TsNet<T>, data: &TrainingData<T>) -> Result<f64> {
    let k = model.config.speakers;
    let p1: Vec<usize> = (0..k).collect();
    let p2: Vec<usize> = (0..k).rev().collect();
    let losses = data
        .valid
        .par_iter()
        .map(|ex| {
            let item = data.item(ex, None)?;
            item_loss(model, &item, &ex.embeddings, [&p1, &p2], &data.stft, None)
        })
        .collect::<Result<Vec<f64>>>()?;
    if losses.is_empty() {
        return Err(Error::EmptyInput("validation chunks"));
    }
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

fn train_step<T: Real>(state: &mut Checkpoint<T>, data: &TrainingData<T>, schedule: &TrainSchedule) -> Result<f64> {
    let (stage, step) = (state.progress.stage, state.progress.step);
    let mut rng = ChaCha8Rng::seed_from_u64(step_seed(schedule.seed, stage, step));
    let n = data.train.len();
    let mut picks = Vec::with_capacity(schedule.batch_size);
    for _ in 0..schedule.batch_size {
        let i = rng.random_range(0..n);
        let mates: Vec<usize> = (0..n).filter(|&j| j != i && data.train[j].meeting == data.train[i].meeting).collect();
        let partner = if !mates.is_empty() && rng.random_bool(schedule.mixup_prob) { Some(mates[rng.random_range(0..mates.len())]) } else { None };
        picks.push((i, partner));
    }
    let k = state.model.config.speakers;
    let perms = (random_permutation(k, &mut rng), random_permutation(k, &mut rng));
    let items = picks
        .par_iter()
        .map(|&(i, p)| data.item(&data.train[i], p.map(|j| &data.train[j])))
        .collect::<Result<Vec<_>>>()?;
    let mut grad = state.model.zeros_like();
    let mut total = 0.0;
    for (item, &(i, _)) in items.iter().zip(&picks) {
        total += item_loss(&state.model, item, &data.train[i].embeddings, [&perms.0, &perms.1], &data.stft, Some(&mut grad))?;
    }
    let loss = total / picks.len() as f64;
    let mut flat_grad = grad.flatten();
    let scale = T::one() / T::of_usize(picks.len());
    flat_grad.iter_mut().for_each(|g| *g *= scale);
    if !loss.is_finite() || flat_grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Diverged { step, detail: format!("{stage:?} loss {loss}") });
    }
    let mut params = state.model.flatten();
    state.optimizer.update(&mut params, &flat_grad);
    state.model.unflatten(&params);
    Ok(loss)
}

fn log_validation<T: Real>(state: &mut Checkpoint<T>, data: &TrainingData<T>) -> Result<()> {
    let loss = validation_loss(&state.model, data)?;
    if !loss.is_finite() {
        return Err(Error::Diverged { step: state.progress.step, detail: format!("validation loss {loss}") });
    }
    state.log.points.push(LossPoint { stage: state.progress.stage, step: state.progress.step, validation: true, loss });
    Ok(())
}

/// Runs (or resumes) the two-stage schedule: BCE on the VAD head, conversion
/// by last-layer replication, then LogMAE on the SEP head.
///
/// Stops early once `until` optimizer steps have been taken in total, so a
/// run can be checkpointed and resumed.
pub fn train_two_stage<T: Real>(
    mut state: Checkpoint<T>,
    data: &TrainingData<T>,
    schedule: &TrainSchedule,
    until: Option<usize>,
) -> Result<Checkpoint<T>> {
    schedule.validate()?;
    if state.log.points.is_empty() {
        log_validation(&mut state, data)?;
    }
    loop {
        let (stage, step) = (state.progress.stage, state.progress.step);
        let budget = match stage {
            Stage::Vad => schedule.vad_steps,
            Stage::Sep => schedule.sep_steps,
            Stage::Done => return Ok(state),
        };
        if step >= budget {
            if step > 0 {
                log_validation(&mut state, data)?;
            }
            if stage == Stage::Vad {
                state.model = replicate_last_layer(&state.model)?;
                state.optimizer = Adam::new(state.model.parameter_count(), schedule.learning_rate);
                state.progress.stage = Stage::Sep;
                state.progress.step = 0;
                log_validation(&mut state, data)?;
            } else {
                state.progress.stage = Stage::Done;
            }
            continue;
        }
        let global = step + if stage == Stage::Sep { schedule.vad_steps } else { 0 };
        if until.is_some_and(|u| global >= u) {
            return Ok(state);
        }
        let loss = train_step(&mut state, data, schedule)?;
        state.log.points.push(LossPoint { stage, step, validation: false, loss });
        state.progress.step += 1;
    }
}
