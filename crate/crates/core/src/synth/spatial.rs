use num_complex::Complex;
use rand::Rng;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use ndarray::Array2;

use crate::scalar::Real;

const SPEED_OF_SOUND: f64 = 343.0;

/// Per-channel propagation of one speaker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerSteering {
    pub azimuth: f64,
    /// Fractional delays in samples, one per channel.
    pub delays: Vec<f64>,
    pub gains: Vec<f64>,
}

/// Far-field anechoic propagation for all speakers of a meeting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteeringModel {
    pub speakers: Vec<SpeakerSteering>,
}

impl SteeringModel {
    /// Uniform circular array of `channels` microphones, speakers spread in azimuth.
    pub fn circular_array<R: Rng>(speakers: usize, channels: usize, radius_m: f64, sample_rate: u32, rng: &mut R) -> Self {
        let sr = f64::from(sample_rate);
        let offset = rng.random_range(0.0..std::f64::consts::TAU);
        let speakers = (0..speakers)
            .map(|k| {
                let azimuth = offset
                    + std::f64::consts::TAU * k as f64 / speakers as f64
                    + rng.random_range(-0.25..0.25) * std::f64::consts::TAU / speakers as f64;
                let delays = (0..channels)
                    .map(|d| {
                        let mic = std::f64::consts::TAU * d as f64 / channels as f64;
                        // mics facing the source hear it first; shift so every delay is >= 0
                        if channels == 1 {
                            0.0
                        } else {
                            radius_m * (1.0 - (azimuth - mic).cos()) / SPEED_OF_SOUND * sr
                        }
                    })
                    .collect();
                let gains = (0..channels).map(|_| rng.random_range(0.9..1.1)).collect();
                SpeakerSteering { azimuth, delays, gains }
            })
            .collect();
        Self { speakers }
    }

    pub fn channels(&self) -> usize {
        self.speakers.first().map_or(0, |s| s.delays.len())
    }
}

/// Smallest odd 3-5-7-smooth length that is at least `n`.
fn odd_fft_len(n: usize) -> usize {
    let mut m = n.max(1) | 1;
    loop {
        let mut r = m;
        for p in [3, 5, 7] {
            while r % p == 0 {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 2;
    }
}

/// Delay (frequency-domain, fractional) and scale a mono track per channel.
///
/// Output has the input length; content delayed past the end is dropped.
pub fn spatialize<T: Real>(track: &[T], steering: &SpeakerSteering) -> Array2<T> {
    let len = track.len();
    let channels = steering.delays.len();
    let mut out = Array2::zeros((channels, len));
    if len == 0 {
        return out;
    }
    let max_delay = steering.delays.iter().cloned().fold(0.0, f64::max);
    let margin = max_delay.ceil() as usize + 64;
    // odd length: no Nyquist bin, so any phase ramp keeps the spectrum Hermitian
    let n = odd_fft_len(len + 2 * margin);
    let mut planner = FftPlanner::<T>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut spectrum: Vec<Complex<T>> = vec![Complex::new(T::zero(), T::zero()); n];
    for (i, &x) in track.iter().enumerate() {
        spectrum[margin + i] = Complex::new(x, T::zero());
    }
    fwd.process(&mut spectrum);
    let mut buf = spectrum.clone();
    for (d, (&delay, &gain)) in steering.delays.iter().zip(&steering.gains).enumerate() {
        for (f, (b, s)) in buf.iter_mut().zip(&spectrum).enumerate() {
            let k = if f <= n / 2 { f as f64 } else { f as f64 - n as f64 };
            let phase = -std::f64::consts::TAU * k * delay / n as f64;
            let rot = Complex::new(T::of(phase.cos() * gain), T::of(phase.sin() * gain));
            *b = *s * rot;
        }
        inv.process(&mut buf);
        let scale = T::one() / T::of_usize(n);
        for l in 0..len {
            out[[d, l]] = buf[margin + l].re * scale;
        }
    }
    out
}
