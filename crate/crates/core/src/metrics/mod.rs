//! Meeting transcription and diarization scores.

mod cpwer;
mod der;
mod hungarian;
mod levenshtein;

pub use cpwer::{
    cpwer, di_cpwer, CpWer, DiCpWer, DiMode, HypothesisOutput, ReferenceTranscript, TimedWords, EXACT_MAX_SEGMENTS,
    EXACT_MAX_SPEAKERS,
};
pub use der::{der, DerBreakdown, SpeakerTurn, DER_RESOLUTION};
pub use hungarian::min_cost_assignment;
pub use levenshtein::{levenshtein, ErrorCounts};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Scale-invariant signal-to-distortion ratio in dB (both signals mean-removed).
pub fn si_sdr<T: Real>(estimate: &[T], reference: &[T]) -> Result<f64> {
    if estimate.len() != reference.len() {
        return Err(Error::Shape(format!("{} vs {} samples", estimate.len(), reference.len())));
    }
    if reference.is_empty() {
        return Err(Error::EmptyInput("si-sdr reference"));
    }
    let n = reference.len() as f64;
    let me = estimate.iter().map(|x| x.to_f64_lossy()).sum::<f64>() / n;
    let mr = reference.iter().map(|x| x.to_f64_lossy()).sum::<f64>() / n;
    let (mut dot, mut energy) = (0.0, 0.0);
    for (e, r) in estimate.iter().zip(reference) {
        let (e, r) = (e.to_f64_lossy() - me, r.to_f64_lossy() - mr);
        dot += e * r;
        energy += r * r;
    }
    if energy == 0.0 {
        return Err(Error::NoReferenceSpeech);
    }
    let alpha = dot / energy;
    let (mut target, mut residual) = (0.0, 0.0);
    for (e, r) in estimate.iter().zip(reference) {
        let (e, r) = (e.to_f64_lossy() - me, r.to_f64_lossy() - mr);
        target += (alpha * r).powi(2);
        residual += (e - alpha * r).powi(2);
    }
    Ok(10.0 * (target.max(f64::MIN_POSITIVE) / residual.max(f64::MIN_POSITIVE)).log10())
}
