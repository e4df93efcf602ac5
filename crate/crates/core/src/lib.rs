//! Joint diarization and separation of multi-channel meeting recordings.
//!
//! The signal chain runs in the STFT domain: per-speaker time-frequency masks
//! are reduced to frame activities, smoothed into constant-activity segments,
//! optionally refined by a guided spatial mixture model, and turned into
//! separated signals by mask-based MVDR beamforming. A small target-speaker
//! network, a synthetic meeting generator and the usual meeting transcription
//! metrics complete the toolkit.
//!
//! All numeric code is generic over [`Real`] (`f32` or `f64`); the aliases at
//! the crate root fix the common instantiations.

pub mod audio;
pub mod beamform;
pub mod linalg;
pub mod mask;
pub mod metrics;
pub mod error;
pub mod gss;
pub mod io;
pub mod scalar;
pub mod synth;
pub mod tsnet;

pub use error::{Error, Result};
pub use scalar::Real;

pub type WaveformF32 = audio::WaveformBlock<f32>;
pub type WaveformF64 = audio::WaveformBlock<f64>;
pub type SpectrogramF32 = audio::SpectrogramTensor<f32>;
pub type SpectrogramF64 = audio::SpectrogramTensor<f64>;
pub type MeetingRecordF32 = synth::MeetingRecord<f32>;
pub type MeetingRecordF64 = synth::MeetingRecord<f64>;
pub type TsNetF32 = tsnet::TsNet<f32>;
pub type TsNetF64 = tsnet::TsNet<f64>;
