//! Toy-scale target-speaker activity (VAD) and separation (SEP) networks.
//!
//! Three blocks: a speaker-independent encoder, a per-speaker processor whose
//! parameters are shared by all speakers and which sees the speaker only
//! through its embedding, and a combiner over the stacked speaker streams.
//! The VAD head emits `T x K` logits; replicating its last layer `F` times
//! gives the SEP head with `T x (F·K)` logits laid out as `f * K + k`.

mod checkpoint;
mod embed;
mod layers;
mod loss;
mod optim;
mod train;

pub use checkpoint::{
    load_checkpoint, load_checkpoint_file, save_checkpoint, save_checkpoint_file, Checkpoint, TrainingProgress,
};
pub use embed::{embed_speakers, EmbeddingProjection, SpeakerEmbeddingSet};
pub use layers::{BiRnn, Dense, Rnn};
pub use loss::{loss_bce, loss_logmae, sigmoid, LOGMAE_FLOOR};
pub use optim::Adam;
pub use train::{
    prepare_examples, train_two_stage, validation_loss, Example, FeatureNormalizer, LossPoint, Stage, TrainSchedule,
    TrainingData, TrainingItem, TrainingLog,
};

use ndarray::{s, Array2, Array3, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    /// Frequency bins `F` of the SEP head.
    pub bins: usize,
    /// Input feature width (log spectrum plus log mel).
    pub input_dim: usize,
    pub speakers: usize,
    pub embedding_dim: usize,
    pub z1: usize,
    pub z2: usize,
    /// Recurrent state size per direction in blocks 1, 2 and 3.
    pub hidden: [usize; 3],
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self { bins: 65, input_dim: 65 + 16, speakers: 2, embedding_dim: 16, z1: 32, z2: 32, hidden: [32, 32, 32], seed: 0 }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [self.bins, self.input_dim, self.speakers, self.embedding_dim, self.z1, self.z2];
        if dims.iter().chain(&self.hidden).any(|&d| d == 0) {
            return Err(Error::Config(format!("all network dimensions must be at least 1: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Head {
    Vad,
    Sep,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TsNet<T> {
    pub config: NetworkConfig,
    pub head: Head,
    pub encoder_rnn: BiRnn<T>,
    pub encoder_out: Dense<T>,
    pub speaker_rnn: BiRnn<T>,
    pub speaker_out: Dense<T>,
    pub combiner_rnn: BiRnn<T>,
    pub output: Dense<T>,
}

/// A network with the frame-level head.
pub type TsVadModel<T> = TsNet<T>;
/// A network with the time-frequency head.
pub type TsSepModel<T> = TsNet<T>;

/// Intermediate activations needed by the backward pass.
pub struct ForwardCache<T> {
    input: Array2<T>,
    enc_rnn: Array2<T>,
    z1: Array2<T>,
    spk_in: Vec<Array2<T>>,
    spk_rnn: Vec<Array2<T>>,
    /// Block-2 outputs per slot, `frames x z2`.
    pub z2: Vec<Array2<T>>,
    stacked: Array2<T>,
    comb_rnn: Array2<T>,
}

/// `perm[j]` is the speaker placed in input slot `j`.
pub type Permutation = Vec<usize>;

pub fn identity_permutation(k: usize) -> Permutation {
    (0..k).collect()
}

pub fn random_permutation<R: Rng>(k: usize, rng: &mut R) -> Permutation {
    let mut p = identity_permutation(k);
    p.shuffle(rng);
    p
}

fn check_permutation(perm: &[usize], k: usize) -> Result<()> {
    let mut seen = vec![false; k];
    if perm.len() != k || perm.iter().any(|&p| p >= k || std::mem::replace(&mut seen[p], true)) {
        return Err(Error::Shape(format!("{perm:?} is not a permutation of {k} speakers")));
    }
    Ok(())
}

impl<T: Real> TsNet<T> {
    pub fn new_vad(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let [h1, h2, h3] = config.hidden;
        let encoder_rnn = BiRnn::new(config.input_dim, h1, &mut rng);
        let encoder_out = Dense::new(2 * h1, config.z1, &mut rng);
        let speaker_rnn = BiRnn::new(config.z1 + config.embedding_dim, h2, &mut rng);
        let speaker_out = Dense::new(2 * h2, config.z2, &mut rng);
        let combiner_rnn = BiRnn::new(config.speakers * config.z2, h3, &mut rng);
        let output = Dense::new(2 * h3, config.speakers, &mut rng);
        Ok(Self { config, head: Head::Vad, encoder_rnn, encoder_out, speaker_rnn, speaker_out, combiner_rnn, output })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            config: self.config.clone(),
            head: self.head,
            encoder_rnn: self.encoder_rnn.zeros_like(),
            encoder_out: self.encoder_out.zeros_like(),
            speaker_rnn: self.speaker_rnn.zeros_like(),
            speaker_out: self.speaker_out.zeros_like(),
            combiner_rnn: self.combiner_rnn.zeros_like(),
            output: self.output.zeros_like(),
        }
    }

    /// Logit columns per frame: `K` for VAD, `F·K` for SEP.
    pub fn output_dim(&self) -> usize {
        self.output.outputs()
    }

    /// Runs all blocks with the embeddings placed in slot order `perm`.
    /// Logit columns refer to slots, not speakers.
    pub fn forward_slots(
        &self,
        features: ArrayView2<'_, T>,
        embeddings: &SpeakerEmbeddingSet<T>,
        perm: &[usize],
    ) -> Result<(Array2<T>, ForwardCache<T>)> {
        let cfg = &self.config;
        if features.ncols() != cfg.input_dim {
            return Err(Error::Shape(format!("features have {} columns, network expects {}", features.ncols(), cfg.input_dim)));
        }
        if embeddings.values.dim() != (cfg.speakers, cfg.embedding_dim) {
            return Err(Error::Shape(format!(
                "embeddings {:?}, network expects {:?}",
                embeddings.values.dim(),
                (cfg.speakers, cfg.embedding_dim)
            )));
        }
        check_permutation(perm, cfg.speakers)?;
        let frames = features.nrows();
        let input = features.to_owned();
        let enc_rnn = self.encoder_rnn.run(input.view());
        let z1 = self.encoder_out.forward(enc_rnn.view()).mapv(T::tanh);
        let mut spk_in = Vec::with_capacity(cfg.speakers);
        let mut spk_rnn = Vec::with_capacity(cfg.speakers);
        let mut z2 = Vec::with_capacity(cfg.speakers);
        for &k in perm {
            let emb = embeddings.values.row(k);
            let mut u = Array2::zeros((frames, cfg.z1 + cfg.embedding_dim));
            u.slice_mut(s![.., ..cfg.z1]).assign(&z1);
            u.slice_mut(s![.., cfg.z1..]).assign(&emb.broadcast((frames, cfg.embedding_dim)).expect("row broadcast"));
            let r = self.speaker_rnn.run(u.view());
            z2.push(self.speaker_out.forward(r.view()).mapv(T::tanh));
            spk_in.push(u);
            spk_rnn.push(r);
        }
        let views: Vec<ArrayView2<'_, T>> = z2.iter().map(|a| a.view()).collect();
        let stacked = ndarray::concatenate(Axis(1), &views).expect("equal frame counts");
        let comb_rnn = self.combiner_rnn.run(stacked.view());
        let logits = self.output.forward(comb_rnn.view());
        Ok((logits, ForwardCache { input, enc_rnn, z1, spk_in, spk_rnn, z2, stacked, comb_rnn }))
    }

    /// Parameter gradients for the slot-ordered logit gradient `g`.
    pub fn backward(&self, cache: &ForwardCache<T>, g: ArrayView2<'_, T>, grad: &mut Self) {
        let cfg = &self.config;
        let g_comb = self.output.backward(cache.comb_rnn.view(), g, &mut grad.output);
        let g_stacked = self.combiner_rnn.backprop(cache.stacked.view(), cache.comb_rnn.view(), g_comb.view(), &mut grad.combiner_rnn);
        let mut g_z1 = Array2::<T>::zeros(cache.z1.raw_dim());
        for j in 0..cfg.speakers {
            let gz2 = g_stacked.slice(s![.., j * cfg.z2..(j + 1) * cfg.z2]);
            let gpre = &gz2 * &cache.z2[j].mapv(|v| T::one() - v * v);
            let g_r = self.speaker_out.backward(cache.spk_rnn[j].view(), gpre.view(), &mut grad.speaker_out);
            let g_u = self.speaker_rnn.backprop(cache.spk_in[j].view(), cache.spk_rnn[j].view(), g_r.view(), &mut grad.speaker_rnn);
            g_z1 += &g_u.slice(s![.., ..cfg.z1]);
        }
        let gpre = &g_z1 * &cache.z1.mapv(|v| T::one() - v * v);
        let g_enc = self.encoder_out.backward(cache.enc_rnn.view(), gpre.view(), &mut grad.encoder_out);
        self.encoder_rnn.backprop(cache.input.view(), cache.enc_rnn.view(), g_enc.view(), &mut grad.encoder_rnn);
    }

    /// Maps slot-ordered logit columns back to speaker order.
    pub fn slots_to_speakers(&self, slots: ArrayView2<'_, T>, perm: &[usize]) -> Array2<T> {
        let k_total = self.config.speakers;
        let groups = slots.ncols() / k_total;
        let mut out = Array2::zeros(slots.raw_dim());
        for (j, &k) in perm.iter().enumerate() {
            for f in 0..groups {
                out.column_mut(f * k_total + k).assign(&slots.column(f * k_total + j));
            }
        }
        out
    }

    /// Inverse of [`Self::slots_to_speakers`], used for gradients.
    pub fn speakers_to_slots(&self, speakers: ArrayView2<'_, T>, perm: &[usize]) -> Array2<T> {
        let k_total = self.config.speakers;
        let groups = speakers.ncols() / k_total;
        let mut out = Array2::zeros(speakers.raw_dim());
        for (j, &k) in perm.iter().enumerate() {
            for f in 0..groups {
                out.column_mut(f * k_total + j).assign(&speakers.column(f * k_total + k));
            }
        }
        out
    }

    /// Speaker-ordered logits (`T x K` or `T x (F·K)`).
    pub fn forward(&self, features: ArrayView2<'_, T>, embeddings: &SpeakerEmbeddingSet<T>, perm: &[usize]) -> Result<Array2<T>> {
        let (slots, _) = self.forward_slots(features, embeddings, perm)?;
        Ok(self.slots_to_speakers(slots.view(), perm))
    }

    /// Sigmoid of the mean speaker-ordered logits of two permuted passes.
    pub fn permutation_average_forward<R: Rng>(
        &self,
        features: ArrayView2<'_, T>,
        embeddings: &SpeakerEmbeddingSet<T>,
        rng: &mut R,
    ) -> Result<Array2<T>> {
        let k = self.config.speakers;
        let (p1, p2) = (random_permutation(k, rng), random_permutation(k, rng));
        Ok(self.permutation_average_logits(features, embeddings, &p1, &p2)?.mapv(sigmoid))
    }

    pub fn permutation_average_logits(
        &self,
        features: ArrayView2<'_, T>,
        embeddings: &SpeakerEmbeddingSet<T>,
        p1: &[usize],
        p2: &[usize],
    ) -> Result<Array2<T>> {
        let a = self.forward(features, embeddings, p1)?;
        let b = self.forward(features, embeddings, p2)?;
        Ok((a + b) * T::of(0.5))
    }

    /// `T x F x K` view of SEP logits or activations.
    pub fn as_time_frequency(&self, out: Array2<T>) -> Result<Array3<T>> {
        let frames = out.nrows();
        let k = self.config.speakers;
        out.into_shape_with_order((frames, self.output_dim() / k, k)).map_err(|e| Error::Shape(e.to_string()))
    }

    pub fn parameter_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, a| n += a.len());
        n
    }

    /// Visits every parameter block in a fixed order.
    pub fn visit(&self, f: &mut dyn FnMut(&str, ndarray::ArrayViewD<'_, T>)) {
        let rnn = |name: &str, r: &Rnn<T>, f: &mut dyn FnMut(&str, ndarray::ArrayViewD<'_, T>)| {
            f(&format!("{name}.w_in"), r.w_in.view().into_dyn());
            f(&format!("{name}.w_rec"), r.w_rec.view().into_dyn());
            f(&format!("{name}.bias"), r.bias.view().into_dyn());
        };
        let dense = |name: &str, d: &Dense<T>, f: &mut dyn FnMut(&str, ndarray::ArrayViewD<'_, T>)| {
            f(&format!("{name}.weight"), d.weight.view().into_dyn());
            f(&format!("{name}.bias"), d.bias.view().into_dyn());
        };
        rnn("encoder_rnn.fwd", &self.encoder_rnn.forward, f);
        rnn("encoder_rnn.bwd", &self.encoder_rnn.backward, f);
        dense("encoder_out", &self.encoder_out, f);
        rnn("speaker_rnn.fwd", &self.speaker_rnn.forward, f);
        rnn("speaker_rnn.bwd", &self.speaker_rnn.backward, f);
        dense("speaker_out", &self.speaker_out, f);
        rnn("combiner_rnn.fwd", &self.combiner_rnn.forward, f);
        rnn("combiner_rnn.bwd", &self.combiner_rnn.backward, f);
        dense("output", &self.output, f);
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&str, ndarray::ArrayViewMutD<'_, T>)) {
        let rnn = |name: &str, r: &mut Rnn<T>, f: &mut dyn FnMut(&str, ndarray::ArrayViewMutD<'_, T>)| {
            f(&format!("{name}.w_in"), r.w_in.view_mut().into_dyn());
            f(&format!("{name}.w_rec"), r.w_rec.view_mut().into_dyn());
            f(&format!("{name}.bias"), r.bias.view_mut().into_dyn());
        };
        let dense = |name: &str, d: &mut Dense<T>, f: &mut dyn FnMut(&str, ndarray::ArrayViewMutD<'_, T>)| {
            f(&format!("{name}.weight"), d.weight.view_mut().into_dyn());
            f(&format!("{name}.bias"), d.bias.view_mut().into_dyn());
        };
        rnn("encoder_rnn.fwd", &mut self.encoder_rnn.forward, f);
        rnn("encoder_rnn.bwd", &mut self.encoder_rnn.backward, f);
        dense("encoder_out", &mut self.encoder_out, f);
        rnn("speaker_rnn.fwd", &mut self.speaker_rnn.forward, f);
        rnn("speaker_rnn.bwd", &mut self.speaker_rnn.backward, f);
        dense("speaker_out", &mut self.speaker_out, f);
        rnn("combiner_rnn.fwd", &mut self.combiner_rnn.forward, f);
        rnn("combiner_rnn.bwd", &mut self.combiner_rnn.backward, f);
        dense("output", &mut self.output, f);
    }

    pub fn flatten(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.parameter_count());
        self.visit(&mut |_, a| out.extend(a.iter().copied()));
        out
    }

    pub fn unflatten(&mut self, values: &[T]) {
        let mut offset = 0;
        self.visit_mut(&mut |_, mut a| {
            for (dst, src) in a.iter_mut().zip(&values[offset..]) {
                *dst = *src;
            }
            offset += a.len();
        });
    }

    pub fn cast<U: Real>(&self) -> TsNet<U> {
        let mut out = TsNet::<U>::new_vad(self.config.clone()).expect("config already validated");
        if self.head == Head::Sep {
            out = replicate_last_layer(&out).expect("vad head");
        }
        let flat: Vec<U> = self.flatten().iter().map(|x| U::of(x.to_f64_lossy())).collect();
        out.unflatten(&flat);
        out
    }
}

/// Turns a VAD network into a SEP network by repeating the last affine layer
/// once per frequency bin (output row `f * K + k` copies VAD row `k`).
pub fn replicate_last_layer<T: Real>(vad: &TsNet<T>) -> Result<TsNet<T>> {
    if vad.head != Head::Vad {
        return Err(Error::Config("only a VAD network can be replicated".into()));
    }
    let k = vad.config.speakers;
    let f_total = vad.config.bins;
    let inputs = vad.output.inputs();
    let mut weight = Array2::zeros((f_total * k, inputs));
    let mut bias = ndarray::Array1::zeros(f_total * k);
    for f in 0..f_total {
        weight.slice_mut(s![f * k..(f + 1) * k, ..]).assign(&vad.output.weight);
        bias.slice_mut(s![f * k..(f + 1) * k]).assign(&vad.output.bias);
    }
    let mut sep = vad.clone();
    sep.head = Head::Sep;
    sep.output = Dense { weight, bias };
    Ok(sep)
}
