//! RIFF/WAVE reading and writing (16-bit PCM and 32-bit float).

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};
use ndarray::Array2;

use super::WaveformBlock;
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavEncoding {
    Pcm16,
    Float32,
}

pub fn read_wav<T: Real, P: AsRef<Path>>(path: P) -> Result<WaveformBlock<T>> {
    let mut reader = WavReader::open(path)?;
    let spec = reader.spec();
    let channels = usize::from(spec.channels);
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Float, 32) => reader.samples::<f32>().map(|s| s.map(f64::from)).collect::<Result<_, _>>()?,
        (SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| f64::from(v) / 32768.0))
            .collect::<Result<_, _>>()?,
        (fmt, bits) => return Err(Error::Format(format!("unsupported wav encoding {fmt:?}/{bits}"))),
    };
    let len = interleaved.len() / channels;
    let samples = Array2::from_shape_fn((channels, len), |(d, l)| T::of(interleaved[l * channels + d]));
    WaveformBlock::new(samples, spec.sample_rate)
}

pub fn write_wav<T: Real, P: AsRef<Path>>(path: P, wave: &WaveformBlock<T>, encoding: WavEncoding) -> Result<()> {
    let channels = u16::try_from(wave.channels()).map_err(|_| Error::Format("too many channels".into()))?;
    let spec = match encoding {
        WavEncoding::Pcm16 => WavSpec {
            channels,
            sample_rate: wave.sample_rate,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        },
        WavEncoding::Float32 => WavSpec {
            channels,
            sample_rate: wave.sample_rate,
            bits_per_sample: 32,
            sample_format: SampleFormat::Float,
        },
    };
    let mut writer = WavWriter::create(path, spec)?;
    for l in 0..wave.len() {
        for d in 0..wave.channels() {
            let x = wave.samples[[d, l]].to_f64_lossy();
            match encoding {
                WavEncoding::Pcm16 => writer.write_sample((x * 32768.0).round().clamp(-32768.0, 32767.0) as i16)?,
                WavEncoding::Float32 => writer.write_sample(x as f32)?,
            }
        }
    }
    writer.finalize()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_round_trip_is_exact_for_f32_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let data = Array2::from_shape_fn((3, 100), |(d, l)| ((d * 100 + l) as f32 * 0.001).sin());
        let w = WaveformBlock::new(data, 16_000).unwrap();
        write_wav(&path, &w, WavEncoding::Float32).unwrap();
        let r: WaveformBlock<f32> = read_wav(&path).unwrap();
        assert_eq!(r, w);
    }

    #[test]
    fn pcm16_round_trip_within_quantisation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.wav");
        let data = Array2::from_shape_fn((2, 64), |(d, l)| 0.5 * ((d + l) as f64 * 0.3).cos());
        let w = WaveformBlock::new(data, 8_000).unwrap();
        write_wav(&path, &w, WavEncoding::Pcm16).unwrap();
        let r: WaveformBlock<f64> = read_wav(&path).unwrap();
        assert_eq!(r.sample_rate, 8_000);
        for (a, b) in r.samples.iter().zip(w.samples.iter()) {
            assert!((a - b).abs() <= 1.0 / 32768.0);
        }
    }
}
