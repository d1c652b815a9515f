use ndarray::{s, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

pub const DEFAULT_SAMPLE_RATE: u32 = 44_100;

/// Multichannel time-domain audio, `[channels × time]`, nominally in [-1, 1].
///
/// Construction checks the invariants: one or two channels, at least one
/// sample, every sample finite.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    samples: Array2<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Array2<f64>, sample_rate: u32) -> Result<Self> {
        let (channels, len) = samples.dim();
        if !(1..=2).contains(&channels) {
            return Err(Error::Audio(format!("expected 1 or 2 channels, got {channels}")));
        }
        if len == 0 {
            return Err(Error::Audio("waveform has no samples".into()));
        }
        if sample_rate == 0 {
            return Err(Error::Audio("sample rate must be positive".into()));
        }
        if let Some(pos) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::Audio(format!("non-finite sample at flat index {pos}")));
        }
        Ok(Self {
            samples: samples.as_standard_layout().into_owned(),
            sample_rate,
        })
    }

    pub fn zeros(channels: usize, len: usize, sample_rate: u32) -> Result<Self> {
        Self::new(Array2::zeros((channels, len)), sample_rate)
    }

    pub fn from_channels(channels: &[Vec<f64>], sample_rate: u32) -> Result<Self> {
        let len = channels.first().map_or(0, Vec::len);
        if channels.iter().any(|c| c.len() != len) {
            return Err(Error::Audio("channels differ in length".into()));
        }
        let flat: Vec<f64> = channels.iter().flatten().copied().collect();
        let samples = Array2::from_shape_vec((channels.len(), len), flat)
            .map_err(|e| Error::Audio(e.to_string()))?;
        Self::new(samples, sample_rate)
    }

    pub fn channels(&self) -> usize {
        self.samples.nrows()
    }

    pub fn len(&self) -> usize {
        self.samples.ncols()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn duration_secs(&self) -> f64 {
        self.len() as f64 / self.sample_rate as f64
    }

    pub fn samples(&self) -> ArrayView2<'_, f64> {
        self.samples.view()
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let row = self.samples.index_axis(Axis(0), c);
        row.to_slice().expect("standard layout")
    }

    pub fn into_samples(self) -> Array2<f64> {
        self.samples
    }

    /// Sum of squared samples over all channels.
    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|v| v * v).sum()
    }

    /// Copy of `len` samples starting at `start`; out-of-range tail is zero.
    pub fn segment(&self, start: usize, len: usize) -> Result<Self> {
        let mut out = Array2::zeros((self.channels(), len));
        let end = (start + len).min(self.len());
        if start < end {
            out.slice_mut(s![.., ..end - start])
                .assign(&self.samples.slice(s![.., start..end]));
        }
        Self::new(out, self.sample_rate)
    }

    /// Truncate or zero-extend at the end.
    pub fn resized(&self, len: usize) -> Result<Self> {
        self.segment(0, len)
    }

    /// Mono is duplicated to stereo; stereo is averaged down to mono.
    pub fn with_channels(&self, channels: usize) -> Result<Self> {
        match (self.channels(), channels) {
            (a, b) if a == b => Ok(self.clone()),
            (1, 2) => {
                let row = self.samples.row(0);
                let mut out = Array2::zeros((2, self.len()));
                out.row_mut(0).assign(&row);
                out.row_mut(1).assign(&row);
                Self::new(out, self.sample_rate)
            }
            (2, 1) => {
                let mean = self.samples.mean_axis(Axis(0)).expect("two rows");
                Self::new(mean.insert_axis(Axis(0)), self.sample_rate)
            }
            (_, c) => Err(Error::Audio(format!("cannot convert to {c} channels"))),
        }
    }

    fn check_compatible(&self, other: &Waveform) -> Result<()> {
        if self.sample_rate != other.sample_rate {
            return Err(Error::SampleRate {
                expected: self.sample_rate,
                actual: other.sample_rate,
            });
        }
        if self.samples.dim() != other.samples.dim() {
            return Err(Error::shape(format!(
                "waveform shapes differ: {:?} vs {:?}",
                self.samples.dim(),
                other.samples.dim()
            )));
        }
        Ok(())
    }

    pub fn add(&self, other: &Waveform) -> Result<Self> {
        self.check_compatible(other)?;
        Self::new(&self.samples + &other.samples, self.sample_rate)
    }

    pub fn sub(&self, other: &Waveform) -> Result<Self> {
        self.check_compatible(other)?;
        Self::new(&self.samples - &other.samples, self.sample_rate)
    }

    pub fn scaled(&self, gain: f64) -> Result<Self> {
        Self::new(&self.samples * gain, self.sample_rate)
    }

    /// Add `other` (same channel count) into `self` starting at `offset`,
    /// clipping whatever falls past the end.
    pub fn add_at(&mut self, other: &Waveform, offset: usize) -> Result<()> {
        if other.channels() != self.channels() {
            return Err(Error::shape("channel count differs"));
        }
        if other.sample_rate != self.sample_rate {
            return Err(Error::SampleRate {
                expected: self.sample_rate,
                actual: other.sample_rate,
            });
        }
        if offset >= self.len() {
            return Ok(());
        }
        let n = other.len().min(self.len() - offset);
        let mut dst = self.samples.slice_mut(s![.., offset..offset + n]);
        dst += &other.samples.slice(s![.., ..n]);
        Ok(())
    }
}
