//! Pitch shift and time stretch.
//!
//! Time stretch is a phase vocoder on a 2048-point STFT with hop 512. Pitch
//! shift by `s` semitones resamples by `2^(s/12)` (which changes both pitch
//! and duration) and then stretches back to the original length.

use std::f64::consts::PI;

use rand::seq::IndexedRandom;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::Rng;
use crate::spectral::{istft_frames, stft_frames, SpectralConfig, Waveform};

pub const PITCH_SEMITONES: [i32; 5] = [-2, -1, 0, 1, 2];
pub const STRETCH_PERCENT: [i32; 5] = [-20, -10, 0, 10, 20];

const VOCODER_WINDOW: usize = 2048;
const VOCODER_HOP: usize = 512;
/// Windowed-sinc half width in zero crossings of the output band limit.
const SINC_ZEROS: f64 = 32.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentSpec {
    pub pitch_semitones: i32,
    /// Duration change: +20 makes the output 20 % longer.
    pub stretch_percent: i32,
}

impl AugmentSpec {
    pub const IDENTITY: Self = Self {
        pitch_semitones: 0,
        stretch_percent: 0,
    };

    pub fn validate(&self) -> Result<()> {
        if !PITCH_SEMITONES.contains(&self.pitch_semitones) {
            return Err(Error::config(format!(
                "pitch shift {} is not one of {PITCH_SEMITONES:?}",
                self.pitch_semitones
            )));
        }
        if !STRETCH_PERCENT.contains(&self.stretch_percent) {
            return Err(Error::config(format!(
                "time stretch {}% is not one of {STRETCH_PERCENT:?}",
                self.stretch_percent
            )));
        }
        Ok(())
    }

    /// Uniform draw from the allowed sets.
    pub fn random(rng: &mut Rng) -> Self {
        Self {
            pitch_semitones: *PITCH_SEMITONES.choose(rng).expect("non-empty"),
            stretch_percent: *STRETCH_PERCENT.choose(rng).expect("non-empty"),
        }
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::IDENTITY
    }
}

pub fn augment(w: &Waveform, spec: AugmentSpec) -> Result<Waveform> {
    spec.validate()?;
    augment_unchecked(w, spec.pitch_semitones as f64, 1.0 + spec.stretch_percent as f64 / 100.0)
}

/// Any pitch shift (semitones) and duration factor, without the set check.
pub fn augment_unchecked(w: &Waveform, semitones: f64, duration: f64) -> Result<Waveform> {
    if !(duration > 0.0) || !semitones.is_finite() {
        return Err(Error::config(format!("invalid augmentation ({semitones}, {duration})")));
    }
    let mut out = w.clone();
    if semitones != 0.0 {
        out = pitch_shift(&out, semitones)?;
    }
    if duration != 1.0 {
        out = time_stretch(&out, duration)?;
    }
    Ok(out)
}

pub fn pitch_shift(w: &Waveform, semitones: f64) -> Result<Waveform> {
    let ratio = 2f64.powf(semitones / 12.0);
    let shorter = ((w.len() as f64 / ratio).round() as usize).max(1);
    let resampled = map_channels(w, |x| Ok(resample(x, shorter)))?;
    let back = map_channels(&resampled, |x| phase_vocoder(x, w.len()))?;
    Ok(back)
}

/// Stretches to `round(len · duration)` samples without changing pitch.
pub fn time_stretch(w: &Waveform, duration: f64) -> Result<Waveform> {
    let target = ((w.len() as f64 * duration).round() as usize).max(1);
    map_channels(w, |x| phase_vocoder(x, target))
}

fn map_channels(w: &Waveform, f: impl Fn(&[f64]) -> Result<Vec<f64>>) -> Result<Waveform> {
    let channels = (0..w.channels()).map(|c| f(w.channel(c))).collect::<Result<Vec<_>>>()?;
    Waveform::from_channels(&channels, w.sample_rate())
}

/// Band-limited resampling of `x` to `len` samples over the same time span.
pub fn resample(x: &[f64], len: usize) -> Vec<f64> {
    let step = x.len() as f64 / len as f64;
    // Lowpass at the narrower of the two Nyquist limits.
    let cutoff = (1.0 / step).min(1.0);
    let half = (SINC_ZEROS / cutoff).ceil() as isize;
    (0..len)
        .map(|j| {
            let p = j as f64 * step;
            let centre = p.floor() as isize;
            let mut acc = 0.0;
            for i in (centre - half).max(0)..=(centre + half).min(x.len() as isize - 1) {
                let d = p - i as f64;
                let u = d / (half as f64 + 1.0);
                let window = 0.5 + 0.5 * (PI * u).cos();
                acc += x[i as usize] * cutoff * sinc(cutoff * d) * window;
            }
            acc
        })
        .collect()
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

fn vocoder_config(len: usize) -> SpectralConfig {
    let window_size = VOCODER_WINDOW.min(len.next_power_of_two()).max(8);
    let hop_length = (window_size / 4).min(VOCODER_HOP);
    SpectralConfig {
        window_size,
        hop_length,
        crop_bins: window_size / 2 + 1,
        ..SpectralConfig::default()
    }
}

fn wrap(phase: f64) -> f64 {
    phase - 2.0 * PI * (phase / (2.0 * PI)).round()
}

/// Phase-vocoder stretch of one channel to exactly `target` samples.
fn phase_vocoder(x: &[f64], target: usize) -> Result<Vec<f64>> {
    if target == x.len() {
        return Ok(x.to_vec());
    }
    let cfg = vocoder_config(x.len().min(target));
    if x.len() < cfg.hop_length {
        return Ok(resample(x, target));
    }
    let spec = stft_frames(x, &cfg)?;
    let (bins, frames) = spec.dim();
    let out_frames = cfg.frame_count(target);
    let rate = x.len() as f64 / target as f64;
    let advance: Vec<f64> = (0..bins)
        .map(|k| 2.0 * PI * k as f64 * cfg.hop_length as f64 / cfg.window_size as f64)
        .collect();
    let mut phase: Vec<f64> = (0..bins).map(|k| spec[[k, 0]].arg()).collect();
    let mut out = ndarray::Array2::<Complex64>::zeros((bins, out_frames));
    for j in 0..out_frames {
        let pos = (j as f64 * rate).min((frames - 1) as f64);
        let t0 = pos.floor() as usize;
        let t1 = (t0 + 1).min(frames - 1);
        let alpha = pos - t0 as f64;
        for k in 0..bins {
            let (a, b) = (spec[[k, t0]], spec[[k, t1]]);
            let mag = (1.0 - alpha) * a.norm() + alpha * b.norm();
            out[[k, j]] = Complex64::from_polar(mag, phase[k]);
            let delta = wrap(b.arg() - a.arg() - advance[k]);
            phase[k] += advance[k] + delta;
        }
    }
    istft_frames(out.view(), &cfg, target)
}
