use std::io::{Read, Write};
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use super::{replicate_last_layer, Adam, Head, NetworkConfig, Stage, TrainingLog, TsNet};
use crate::error::{Error, Result};
use crate::io::{read_tensor, write_real};
use crate::scalar::Real;

const CHECKPOINT_MAGIC: &[u8; 8] = b"TSEPCKPT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingProgress {
    pub stage: Stage,
    /// Optimizer steps taken in the current stage.
    pub step: usize,
}

/// Model, optimizer state and loss history: everything needed to resume.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub model: TsNet<T>,
    pub optimizer: Adam<T>,
    pub progress: TrainingProgress,
    pub log: TrainingLog,
}

impl<T: Real> Checkpoint<T> {
    /// Fresh state for a VAD network at the start of training.
    pub fn new(model: TsNet<T>, learning_rate: f64) -> Self {
        let optimizer = Adam::new(model.parameter_count(), learning_rate);
        Self { model, optimizer, progress: TrainingProgress { stage: Stage::Vad, step: 0 }, log: TrainingLog::default() }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ParameterBlock {
    name: String,
    dims: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct OptimizerHeader {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: NetworkConfig,
    head: Head,
    parameters: Vec<ParameterBlock>,
    progress: TrainingProgress,
    optimizer: OptimizerHeader,
    log: TrainingLog,
}

/// Writes a JSON header naming every parameter block, then one tensor per
/// block in header order, then the optimizer moments. Values are stored as
/// `f32`, so an `f32` run resumes bit-exactly.
pub fn save_checkpoint<T: Real, W: Write>(w: &mut W, ckpt: &Checkpoint<T>) -> Result<()> {
    let mut parameters = Vec::new();
    ckpt.model.visit(&mut |name, a| parameters.push(ParameterBlock { name: name.to_string(), dims: a.shape().to_vec() }));
    let opt = &ckpt.optimizer;
    let header = Header {
        config: ckpt.model.config.clone(),
        head: ckpt.model.head,
        parameters,
        progress: ckpt.progress,
        optimizer: OptimizerHeader { lr: opt.lr, beta1: opt.beta1, beta2: opt.beta2, eps: opt.eps, step: opt.step },
        log: ckpt.log.clone(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    let mut result = Ok(());
    ckpt.model.visit(&mut |_, a| {
        if result.is_ok() {
            result = write_real(w, a);
        }
    });
    result?;
    for moments in [&opt.m, &opt.v] {
        write_real(w, ndarray::ArrayView1::from(moments.as_slice()).into_dyn())?;
    }
    Ok(())
}

fn read_flat<T: Real, R: Read>(r: &mut R, dims: &[usize], what: &str) -> Result<ArrayD<T>> {
    let a = read_tensor(r)?.into_real()?;
    if a.shape() != dims {
        return Err(Error::Format(format!("{what}: stored shape {:?}, expected {dims:?}", a.shape())));
    }
    Ok(a.mapv(|x| T::of(f64::from(x))).into_shape_with_order(IxDyn(dims)).map_err(|e| Error::Format(e.to_string()))?)
}

pub fn load_checkpoint<T: Real, R: Read>(r: &mut R) -> Result<Checkpoint<T>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a checkpoint file".into()));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let len = usize::try_from(u64::from_le_bytes(len)).map_err(|_| Error::Format("header length".into()))?;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json)?;
    let header: Header = serde_json::from_slice(&json).map_err(|e| Error::Format(e.to_string()))?;
    let mut model = TsNet::<T>::new_vad(header.config)?;
    if header.head == Head::Sep {
        model = replicate_last_layer(&model)?;
    }
    let mut expected = Vec::new();
    model.visit(&mut |name, a| expected.push((name.to_string(), a.shape().to_vec())));
    if expected.len() != header.parameters.len()
        || expected.iter().zip(&header.parameters).any(|((n, d), p)| *n != p.name || *d != p.dims)
    {
        return Err(Error::Format("parameter blocks do not match the network configuration".into()));
    }
    let mut values = Vec::with_capacity(model.parameter_count());
    for p in &header.parameters {
        values.extend(read_flat::<T, R>(r, &p.dims, &p.name)?.iter().copied());
    }
    model.unflatten(&values);
    let n = model.parameter_count();
    let m = read_flat::<T, R>(r, &[n], "first moments")?.into_raw_vec_and_offset().0;
    let v = read_flat::<T, R>(r, &[n], "second moments")?.into_raw_vec_and_offset().0;
    let o = header.optimizer;
    let optimizer = Adam { lr: o.lr, beta1: o.beta1, beta2: o.beta2, eps: o.eps, step: o.step, m, v };
    Ok(Checkpoint { model, optimizer, progress: header.progress, log: header.log })
}

pub fn save_checkpoint_file<T: Real>(path: &Path, ckpt: &Checkpoint<T>) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    save_checkpoint(&mut w, ckpt)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint_file<T: Real>(path: &Path) -> Result<Checkpoint<T>> {
    load_checkpoint(&mut std::io::BufReader::new(std::fs::File::open(path)?))
}
