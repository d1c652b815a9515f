//! STFT/ISTFT front-end.
//!
//! Waveforms become [`ComplexSpectrogram`]s whose complex bins are packed as
//! real channels in the order `[ch0_real, ch0_imag, ch1_real, ch1_imag]`,
//! cropped to the lowest `crop_bins` frequency bins. The inverse restores the
//! cropped bins (zeros by default) and any trimmed trailing frames as zeros,
//! then overlap-adds with window-squared-sum normalization.
//!
//! Framing follows the centered convention: the signal is reflect-padded by
//! `window_size / 2` on both sides, so a signal of `n` samples yields
//! `n / hop_length + 1` frames and frame `t` is centered on sample
//! `t * hop_length`.
//!
//! [`istft_adjoint`] is the exact transpose of [`istft`] with respect to the
//! packed real channels; the training loss is taken on waveforms and flows
//! back through it.

mod waveform;
pub mod wav;

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{s, Array2, Array3, ArrayView2, ArrayView3};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

pub use waveform::{Waveform, DEFAULT_SAMPLE_RATE};

use crate::error::{Error, Result};

/// Overlap-add normalizer entries below this are treated as uncovered.
const WINDOW_SUM_FLOOR: f64 = 1e-11;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum WindowKind {
    /// `0.5 - 0.5 cos(2πn/N)` for `n < N`.
    #[default]
    HannPeriodic,
}

/// What the inverse puts in the bins above the crop.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum HighBinFill {
    #[default]
    Zero,
    /// Copy the mixture's own high bins (needs the uncropped mixture spectrogram).
    Mixture,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectralConfig {
    pub sample_rate: u32,
    pub window_size: usize,
    pub hop_length: usize,
    pub window: WindowKind,
    /// Bins kept after the transform: 2048 for vocals/drums/other, 864 for bass.
    pub crop_bins: usize,
    pub center_pad: bool,
    pub high_bins: HighBinFill,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        Self {
            sample_rate: DEFAULT_SAMPLE_RATE,
            window_size: 6144,
            hop_length: 1024,
            window: WindowKind::HannPeriodic,
            crop_bins: 2048,
            center_pad: true,
            high_bins: HighBinFill::Zero,
        }
    }
}

impl SpectralConfig {
    pub fn full_bins(&self) -> usize {
        self.window_size / 2 + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_size < 2 {
            return Err(Error::config("window_size must be at least 2"));
        }
        if self.hop_length == 0 || self.hop_length > self.window_size {
            return Err(Error::config(format!(
                "hop_length must be in 1..={}, got {}",
                self.window_size, self.hop_length
            )));
        }
        if self.crop_bins == 0 || self.crop_bins > self.full_bins() {
            return Err(Error::config(format!(
                "crop_bins must be in 1..={}, got {}",
                self.full_bins(),
                self.crop_bins
            )));
        }
        if self.sample_rate == 0 {
            return Err(Error::config("sample_rate must be positive"));
        }
        Ok(())
    }

    /// Number of frames the transform produces for `len` samples.
    pub fn frame_count(&self, len: usize) -> usize {
        if self.center_pad {
            len / self.hop_length + 1
        } else if len < self.window_size {
            0
        } else {
            (len - self.window_size) / self.hop_length + 1
        }
    }

    fn pad(&self) -> usize {
        if self.center_pad {
            self.window_size / 2
        } else {
            0
        }
    }

    pub fn window_values(&self) -> Vec<f64> {
        let n = self.window_size as f64;
        match self.window {
            WindowKind::HannPeriodic => (0..self.window_size)
                .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n).cos())
                .collect(),
        }
    }

    /// Overlap-add normalizer `Σ_t w²[n - t·hop]` over a buffer covering
    /// `frames` frames.
    pub fn window_sum(&self, frames: usize) -> Vec<f64> {
        let win = self.window_values();
        let len = (frames.max(1) - 1) * self.hop_length + self.window_size;
        let mut sum = vec![0.0; len];
        for t in 0..frames {
            let start = t * self.hop_length;
            for (acc, w) in sum[start..start + self.window_size].iter_mut().zip(&win) {
                *acc += w * w;
            }
        }
        sum
    }
}

/// Packed complex spectrogram `[C × F × T]`, `C = 2 × audio channels`.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexSpectrogram {
    data: Array3<f64>,
    full_bins: usize,
    full_frames: usize,
    source_length: usize,
    sample_rate: u32,
}

impl ComplexSpectrogram {
    pub fn new(
        data: Array3<f64>,
        full_bins: usize,
        full_frames: usize,
        source_length: usize,
        sample_rate: u32,
    ) -> Result<Self> {
        let (c, f, t) = data.dim();
        if c == 0 || c % 2 != 0 {
            return Err(Error::shape(format!("packed channel count must be even, got {c}")));
        }
        if f > full_bins {
            return Err(Error::shape(format!("{f} bins exceed full bin count {full_bins}")));
        }
        if t > full_frames {
            return Err(Error::shape(format!("{t} frames exceed full frame count {full_frames}")));
        }
        Ok(Self {
            data,
            full_bins,
            full_frames,
            source_length,
            sample_rate,
        })
    }

    pub fn data(&self) -> ArrayView3<'_, f64> {
        self.data.view()
    }

    pub fn into_data(self) -> Array3<f64> {
        self.data
    }

    pub fn packed_channels(&self) -> usize {
        self.data.dim().0
    }

    pub fn audio_channels(&self) -> usize {
        self.data.dim().0 / 2
    }

    pub fn bins(&self) -> usize {
        self.data.dim().1
    }

    pub fn frames(&self) -> usize {
        self.data.dim().2
    }

    pub fn full_bins(&self) -> usize {
        self.full_bins
    }

    pub fn full_frames(&self) -> usize {
        self.full_frames
    }

    pub fn source_length(&self) -> usize {
        self.source_length
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    /// Same metadata, different data (which must fit within the full extent).
    pub fn with_data(&self, data: Array3<f64>) -> Result<Self> {
        Self::new(data, self.full_bins, self.full_frames, self.source_length, self.sample_rate)
    }

    /// Keep only the first `frames` frames; the rest come back as zeros on inversion.
    pub fn trim_frames(&self, frames: usize) -> Result<Self> {
        if frames > self.frames() {
            return Err(Error::shape(format!(
                "cannot trim {} frames to {frames}",
                self.frames()
            )));
        }
        self.with_data(self.data.slice(s![.., .., ..frames]).to_owned())
    }
}

/// Interleave complex `[ch × F × T]` into real `[2ch × F × T]`.
pub fn pack(z: ArrayView3<'_, Complex64>) -> Array3<f64> {
    let (ch, f, t) = z.dim();
    Array3::from_shape_fn((2 * ch, f, t), |(c, k, n)| {
        let v = z[[c / 2, k, n]];
        if c % 2 == 0 {
            v.re
        } else {
            v.im
        }
    })
}

pub fn unpack(x: ArrayView3<'_, f64>) -> Result<Array3<Complex64>> {
    let (c, f, t) = x.dim();
    if c % 2 != 0 {
        return Err(Error::shape(format!("packed channel count must be even, got {c}")));
    }
    Ok(Array3::from_shape_fn((c / 2, f, t), |(ch, k, n)| {
        Complex64::new(x[[2 * ch, k, n]], x[[2 * ch + 1, k, n]])
    }))
}

struct Plan {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    n: usize,
}

impl Plan {
    fn new(cfg: &SpectralConfig) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            forward: planner.plan_fft_forward(cfg.window_size),
            inverse: planner.plan_fft_inverse(cfg.window_size),
            window: cfg.window_values(),
            n: cfg.window_size,
        }
    }

    /// Real inverse of a half spectrum; imaginary parts of DC and Nyquist are ignored.
    fn irfft(&self, half: &[Complex64], buf: &mut [Complex64]) {
        let n = self.n;
        let bins = n / 2 + 1;
        buf[0] = Complex64::new(half[0].re, 0.0);
        for k in 1..bins {
            let v = half[k];
            if 2 * k == n {
                buf[k] = Complex64::new(v.re, 0.0);
            } else {
                buf[k] = v;
                buf[n - k] = v.conj();
            }
        }
        self.inverse.process(buf);
    }
}

/// Index into a signal of length `len` under repeated reflection (no edge repeat).
fn reflect(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let m = i.rem_euclid(period);
    if m >= len as isize {
        (period - m) as usize
    } else {
        m as usize
    }
}

fn check_signal(signal: &[f64], cfg: &SpectralConfig) -> Result<()> {
    cfg.validate()?;
    if signal.len() < cfg.hop_length {
        return Err(Error::Audio(format!(
            "signal of {} samples is shorter than one hop ({})",
            signal.len(),
            cfg.hop_length
        )));
    }
    if !cfg.center_pad && signal.len() < cfg.window_size {
        return Err(Error::Audio("signal shorter than one window without center padding".into()));
    }
    if signal.iter().any(|v| !v.is_finite()) {
        return Err(Error::Audio("non-finite sample".into()));
    }
    Ok(())
}

/// Uncropped complex STFT of one channel, `[window_size/2 + 1 × frames]`.
pub fn stft_frames(signal: &[f64], cfg: &SpectralConfig) -> Result<Array2<Complex64>> {
    check_signal(signal, cfg)?;
    let plan = Plan::new(cfg);
    let n = cfg.window_size;
    let bins = cfg.full_bins();
    let frames = cfg.frame_count(signal.len());
    let pad = cfg.pad() as isize;
    let mut out = Array2::zeros((bins, frames));
    let mut buf = vec![Complex64::default(); n];
    for t in 0..frames {
        let start = (t * cfg.hop_length) as isize - pad;
        for (i, b) in buf.iter_mut().enumerate() {
            let v = signal[reflect(start + i as isize, signal.len())];
            *b = Complex64::new(v * plan.window[i], 0.0);
        }
        plan.forward.process(&mut buf);
        for k in 0..bins {
            out[[k, t]] = buf[k];
        }
    }
    Ok(out)
}

/// Inverse of [`stft_frames`]; returns exactly `length` samples.
pub fn istft_frames(frames: ArrayView2<'_, Complex64>, cfg: &SpectralConfig, length: usize) -> Result<Vec<f64>> {
    cfg.validate()?;
    let (bins, count) = frames.dim();
    if bins != cfg.full_bins() {
        return Err(Error::shape(format!("expected {} bins, got {bins}", cfg.full_bins())));
    }
    let plan = Plan::new(cfg);
    let n = cfg.window_size;
    let norm = cfg.window_sum(count);
    let mut acc = vec![0.0; norm.len()];
    let mut half = vec![Complex64::default(); bins];
    let mut buf = vec![Complex64::default(); n];
    for t in 0..count {
        for (k, h) in half.iter_mut().enumerate() {
            *h = frames[[k, t]];
        }
        plan.irfft(&half, &mut buf);
        let start = t * cfg.hop_length;
        for i in 0..n {
            acc[start + i] += buf[i].re / n as f64 * plan.window[i];
        }
    }
    let pad = cfg.pad();
    Ok((0..length)
        .map(|i| {
            let j = i + pad;
            if j < acc.len() && norm[j] > WINDOW_SUM_FLOOR {
                acc[j] / norm[j]
            } else {
                0.0
            }
        })
        .collect())
}

fn full_spectrum(w: &Waveform, cfg: &SpectralConfig) -> Result<Array3<Complex64>> {
    let mut out: Option<Array3<Complex64>> = None;
    for c in 0..w.channels() {
        let frames = stft_frames(w.channel(c), cfg)?;
        let dst = out.get_or_insert_with(|| Array3::zeros((w.channels(), frames.nrows(), frames.ncols())));
        dst.index_axis_mut(ndarray::Axis(0), c).assign(&frames);
    }
    Ok(out.expect("at least one channel"))
}

/// Cropped, channel-packed STFT.
pub fn stft(w: &Waveform, cfg: &SpectralConfig) -> Result<ComplexSpectrogram> {
    let full = full_spectrum(w, cfg)?;
    let frames = full.dim().2;
    let cropped = full.slice(s![.., ..cfg.crop_bins, ..]);
    ComplexSpectrogram::new(pack(cropped), cfg.full_bins(), frames, w.len(), w.sample_rate())
}

/// Channel-packed STFT with every bin kept (used for [`HighBinFill::Mixture`]).
pub fn stft_uncropped(w: &Waveform, cfg: &SpectralConfig) -> Result<ComplexSpectrogram> {
    let full = full_spectrum(w, cfg)?;
    let frames = full.dim().2;
    ComplexSpectrogram::new(pack(full.view()), cfg.full_bins(), frames, w.len(), w.sample_rate())
}

pub fn istft(s: &ComplexSpectrogram, cfg: &SpectralConfig) -> Result<Waveform> {
    istft_with_fill(s, cfg, None)
}

/// Inverse with cropped bins restored from `mixture` (an uncropped
/// spectrogram) when the config asks for [`HighBinFill::Mixture`].
pub fn istft_with_fill(
    s: &ComplexSpectrogram,
    cfg: &SpectralConfig,
    mixture: Option<&ComplexSpectrogram>,
) -> Result<Waveform> {
    cfg.validate()?;
    if s.full_bins != cfg.full_bins() {
        return Err(Error::shape(format!(
            "spectrogram built for {} bins, config has {}",
            s.full_bins,
            cfg.full_bins()
        )));
    }
    if s.bins() > s.full_bins {
        return Err(Error::shape("more bins than the full spectrum"));
    }
    let fill = match (cfg.high_bins, mixture) {
        (HighBinFill::Mixture, Some(m)) => {
            if m.bins() != m.full_bins || m.packed_channels() != s.packed_channels() {
                return Err(Error::shape("mixture fill needs an uncropped spectrogram with matching channels"));
            }
            Some(m)
        }
        (HighBinFill::Mixture, None) => {
            return Err(Error::config("high_bins = mixture requires the mixture spectrogram"))
        }
        (HighBinFill::Zero, _) => None,
    };
    let z = unpack(s.data.view())?;
    let mut channels = Vec::with_capacity(s.audio_channels());
    for c in 0..s.audio_channels() {
        let mut full = Array2::<Complex64>::zeros((s.full_bins, s.full_frames));
        full.slice_mut(s![..s.bins(), ..s.frames()])
            .assign(&z.index_axis(ndarray::Axis(0), c));
        if let Some(m) = fill {
            let mz = unpack(m.data.view())?;
            let frames = s.frames().min(m.frames());
            full.slice_mut(s![s.bins().., ..frames])
                .assign(&mz.slice(s![c, s.bins().., ..frames]));
        }
        channels.push(istft_frames(full.view(), cfg, s.source_length)?);
    }
    Waveform::from_channels(&channels, s.sample_rate)
}

/// Transpose of [`istft`] (zero high-bin fill) with respect to the packed
/// real channels of `layout`: maps a waveform gradient `[ch × source_length]`
/// to a spectrogram gradient shaped like `layout`.
pub fn istft_adjoint(grad: ArrayView2<'_, f64>, layout: &ComplexSpectrogram, cfg: &SpectralConfig) -> Result<Array3<f64>> {
    cfg.validate()?;
    let (ch, len) = grad.dim();
    if ch != layout.audio_channels() || len != layout.source_length {
        return Err(Error::shape(format!(
            "gradient {:?} does not match spectrogram layout ({} ch, {} samples)",
            grad.dim(),
            layout.audio_channels(),
            layout.source_length
        )));
    }
    let plan = Plan::new(cfg);
    let n = cfg.window_size;
    let norm = cfg.window_sum(layout.full_frames);
    let pad = cfg.pad();
    let (bins, frames) = (layout.bins(), layout.frames());
    let mut out = Array3::zeros((2 * ch, bins, frames));
    let mut buf = vec![Complex64::default(); n];
    for c in 0..ch {
        let mut g = vec![0.0; norm.len()];
        for i in 0..len {
            let j = i + pad;
            if j < g.len() && norm[j] > WINDOW_SUM_FLOOR {
                g[j] = grad[[c, i]] / norm[j];
            }
        }
        for t in 0..frames {
            let start = t * cfg.hop_length;
            for i in 0..n {
                buf[i] = Complex64::new(g[start + i] * plan.window[i], 0.0);
            }
            plan.forward.process(&mut buf);
            for k in 0..bins {
                let edge = k == 0 || 2 * k == n;
                let scale = if edge { 1.0 } else { 2.0 } / n as f64;
                out[[2 * c, k, t]] = scale * buf[k].re;
                out[[2 * c + 1, k, t]] = if edge { 0.0 } else { scale * buf[k].im };
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> SpectralConfig {
        SpectralConfig {
            window_size: 64,
            hop_length: 16,
            crop_bins: 33,
            ..Default::default()
        }
    }

    #[test]
    fn reflect_matches_numpy_convention() {
        // numpy.pad([0,1,2,3], 3, 'reflect') -> 3 2 1 0 1 2 3 2 1 0
        let got: Vec<usize> = (-3..7).map(|i| reflect(i, 4)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 1, 2, 3, 2, 1, 0]);
    }

    #[test]
    fn rejects_short_and_bad_configs() {
        let cfg = small_cfg();
        let w = Waveform::zeros(1, 15, 44_100).unwrap();
        assert!(stft(&w, &cfg).is_err());
        let bad = SpectralConfig {
            hop_length: 128,
            ..small_cfg()
        };
        assert!(bad.validate().is_err());
        let bad = SpectralConfig {
            crop_bins: 34,
            ..small_cfg()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn istft_rejects_more_bins_than_full() {
        let data = Array3::zeros((2, 40, 3));
        assert!(ComplexSpectrogram::new(data, 33, 3, 32, 44_100).is_err());
    }

    #[test]
    fn zero_spectrogram_inverts_to_silence() {
        let cfg = small_cfg();
        let s = ComplexSpectrogram::new(Array3::zeros((4, 33, 9)), 33, 9, 130, 44_100).unwrap();
        let w = istft(&s, &cfg).unwrap();
        assert_eq!(w.len(), 130);
        assert_eq!(w.channels(), 2);
        assert!(w.samples().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pack_order_is_real_imag_per_channel() {
        let z = Array3::from_shape_fn((2, 1, 1), |(c, _, _)| Complex64::new(c as f64 + 1.0, -(c as f64) - 1.0));
        let p = pack(z.view());
        assert_eq!(p.iter().copied().collect::<Vec<_>>(), vec![1.0, -1.0, 2.0, -2.0]);
    }
}
