//! Chunked long-audio inference with linear cross-fades.

use ndarray::{Array1, Array2, Axis};

use crate::error::{Error, Result};
use crate::spectral::{istft_with_fill, stft, stft_uncropped, HighBinFill, Waveform};

use super::estimator::Estimator;

pub const DEFAULT_OVERLAP: f64 = 0.5;

/// Chunk start offsets covering `len` samples. The hop between chunks is
/// `round(chunk · (1 − overlap))`; the last chunk is aligned to the end.
pub fn chunk_starts(len: usize, chunk: usize, overlap: f64) -> Result<Vec<usize>> {
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::config(format!("overlap must be in [0, 1), got {overlap}")));
    }
    if len <= chunk {
        return Ok(vec![0]);
    }
    let step = ((chunk as f64 * (1.0 - overlap)).round() as usize).max(1);
    let mut starts: Vec<usize> = (0..).map(|i| i * step).take_while(|&s| s + chunk < len).collect();
    starts.push(len - chunk);
    Ok(starts)
}

/// Trapezoidal weights: linear ramps of `ramp` samples at both ends.
pub fn crossfade_weights(chunk: usize, ramp: usize) -> Vec<f64> {
    let r = (ramp + 1) as f64;
    (0..chunk)
        .map(|i| {
            let up = (i + 1) as f64 / r;
            let down = (chunk - i) as f64 / r;
            up.min(down).min(1.0)
        })
        .collect()
}

/// STFT → estimator → ISTFT on one chunk whose length is the model's chunk size.
pub fn estimate_chunk<E: Estimator + ?Sized>(est: &E, chunk: &Waveform) -> Result<Waveform> {
    let cfg = est.model_config();
    let spec = stft(chunk, &cfg.spectral)?;
    let m = cfg.frame_multiple();
    let keep = spec.frames() / m * m;
    if keep == 0 {
        return Err(Error::shape(format!(
            "chunk of {} samples gives {} frames, fewer than {m}",
            chunk.len(),
            spec.frames()
        )));
    }
    let spec = spec.trim_frames(keep)?;
    let x = spec.data().to_owned().insert_axis(Axis(0));
    let y = est.estimate(&x)?;
    if !y.iter().all(|v| v.is_finite()) {
        return Err(Error::Numerical("estimator produced non-finite values".into()));
    }
    let out = spec.with_data(y.index_axis_move(Axis(0), 0))?;
    let mixture = match cfg.spectral.high_bins {
        HighBinFill::Mixture => Some(stft_uncropped(chunk, &cfg.spectral)?),
        HighBinFill::Zero => None,
    };
    istft_with_fill(&out, &cfg.spectral, mixture.as_ref())
}

/// Separates a full-length mixture. Output has the input's length and channel count.
pub fn separate<E: Estimator + ?Sized>(est: &E, mix: &Waveform, overlap: f64) -> Result<Waveform> {
    let cfg = est.model_config();
    if mix.sample_rate() != cfg.spectral.sample_rate {
        return Err(Error::SampleRate {
            expected: cfg.spectral.sample_rate,
            actual: mix.sample_rate(),
        });
    }
    let input = mix.with_channels(cfg.audio_channels)?;
    let len = input.len();
    let chunk = cfg.chunk_samples();
    let starts = chunk_starts(len, chunk, overlap)?;
    let ramp = if starts.len() > 1 {
        chunk - (chunk as f64 * (1.0 - overlap)).round().max(1.0) as usize
    } else {
        0
    };
    let weights = Array1::from(crossfade_weights(chunk, ramp));
    let mut acc = Array2::<f64>::zeros((input.channels(), len));
    let mut wsum = Array1::<f64>::zeros(len);
    for &start in &starts {
        let piece = estimate_chunk(est, &input.segment(start, chunk)?)?;
        let n = chunk.min(len - start);
        let w = weights.slice(ndarray::s![..n]);
        let mut dst = acc.slice_mut(ndarray::s![.., start..start + n]);
        for (mut row, src) in dst.outer_iter_mut().zip(piece.samples().outer_iter()) {
            row.zip_mut_with(&(&src.slice(ndarray::s![..n]) * &w), |a, &b| *a += b);
        }
        wsum.slice_mut(ndarray::s![start..start + n])
            .zip_mut_with(&w, |a, &b| *a += b);
    }
    for mut row in acc.outer_iter_mut() {
        row.zip_mut_with(&wsum, |a, &w| *a /= w);
    }
    Waveform::new(acc, input.sample_rate())?.with_channels(mix.channels())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn starts_cover_the_signal() {
        assert_eq!(chunk_starts(100, 40, 0.5).unwrap(), vec![0, 20, 40, 60]);
        assert_eq!(chunk_starts(30, 40, 0.5).unwrap(), vec![0]);
        assert_eq!(chunk_starts(95, 40, 0.0).unwrap(), vec![0, 40, 55]);
        assert!(chunk_starts(95, 40, 1.0).is_err());
    }

    #[test]
    fn weights_ramp_linearly() {
        assert_eq!(crossfade_weights(6, 2), vec![1.0 / 3.0, 2.0 / 3.0, 1.0, 1.0, 2.0 / 3.0, 1.0 / 3.0]);
        assert!(crossfade_weights(5, 0).iter().all(|&w| w == 1.0));
    }
}
