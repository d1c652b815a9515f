//! Energy-ratio SDR, its per-song mean (uSDR) and 1-second chunk median (cSDR).
//!
//! `sdr = 10·log10(‖ref‖² / ‖ref − est‖²)` with energies summed over channels.
//! The error energy is floored at `1e-10·‖ref‖²`, which caps the score at
//! +100 dB. References with energy below `1e-12` are silent: they are
//! flagged and left out of every aggregate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::Waveform;

pub const SDR_CAP_DB: f64 = 100.0;
pub const SILENCE_ENERGY: f64 = 1e-12;
const ERROR_FLOOR: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SdrStatus {
    Finite,
    /// Error below the floor; `db` is the cap.
    Capped,
    /// Reference too quiet to score; `db` is NaN.
    Silent,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sdr {
    pub db: f64,
    pub status: SdrStatus,
}

impl Sdr {
    pub fn is_scored(&self) -> bool {
        self.status != SdrStatus::Silent
    }
}

fn check_pair(reference: &Waveform, estimate: &Waveform) -> Result<()> {
    if reference.channels() != estimate.channels() || reference.len() != estimate.len() {
        return Err(Error::shape(format!(
            "reference is {}x{}, estimate is {}x{}",
            reference.channels(),
            reference.len(),
            estimate.channels(),
            estimate.len()
        )));
    }
    Ok(())
}

/// SDR over raw sample slices (same length, channel-concatenated).
fn sdr_slices<'a>(pairs: impl Iterator<Item = (&'a f64, &'a f64)>) -> Sdr {
    let (mut signal, mut error) = (0.0, 0.0);
    for (r, e) in pairs {
        signal += r * r;
        error += (r - e) * (r - e);
    }
    if signal < SILENCE_ENERGY {
        return Sdr {
            db: f64::NAN,
            status: SdrStatus::Silent,
        };
    }
    let floor = ERROR_FLOOR * signal;
    if error <= floor {
        return Sdr {
            db: SDR_CAP_DB,
            status: SdrStatus::Capped,
        };
    }
    Sdr {
        db: 10.0 * (signal / error).log10(),
        status: SdrStatus::Finite,
    }
}

pub fn sdr(reference: &Waveform, estimate: &Waveform) -> Result<Sdr> {
    check_pair(reference, estimate)?;
    Ok(sdr_slices(reference.samples().iter().zip(estimate.samples().iter())))
}

/// Mean over scored values; `None` when every value is silent.
pub fn mean_scored(values: &[Sdr]) -> Option<f64> {
    let scored: Vec<f64> = values.iter().filter(|s| s.is_scored()).map(|s| s.db).collect();
    (!scored.is_empty()).then(|| scored.iter().sum::<f64>() / scored.len() as f64)
}

/// Median with the two middle values averaged for even counts.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

pub fn usdr(tracks: &[(Waveform, Waveform)]) -> Result<f64> {
    let values = tracks.iter().map(|(r, e)| sdr(r, e)).collect::<Result<Vec<_>>>()?;
    mean_scored(&values).ok_or_else(|| Error::Numerical("every reference track is silent".into()))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChunkSdr {
    pub index: usize,
    pub start: usize,
    pub sdr: Sdr,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Csdr {
    pub median_db: f64,
    /// Every full 1-second chunk, silent ones included.
    pub chunks: Vec<ChunkSdr>,
}

impl Csdr {
    pub fn scored_db(&self) -> Vec<f64> {
        self.chunks.iter().filter(|c| c.sdr.is_scored()).map(|c| c.sdr.db).collect()
    }
}

/// SDR per non-overlapping chunk of `chunk_len` samples (final partial
/// chunk dropped), median over scored chunks.
pub fn csdr_with_chunk(reference: &Waveform, estimate: &Waveform, chunk_len: usize) -> Result<Csdr> {
    check_pair(reference, estimate)?;
    if chunk_len == 0 || reference.len() < chunk_len {
        return Err(Error::Data(format!(
            "{} samples is shorter than one {chunk_len}-sample chunk",
            reference.len()
        )));
    }
    let (r, e) = (reference.samples(), estimate.samples());
    let chunks: Vec<ChunkSdr> = (0..reference.len() / chunk_len)
        .map(|index| {
            let start = index * chunk_len;
            let rs = r.slice(ndarray::s![.., start..start + chunk_len]);
            let es = e.slice(ndarray::s![.., start..start + chunk_len]);
            ChunkSdr {
                index,
                start,
                sdr: sdr_slices(rs.iter().zip(es.iter())),
            }
        })
        .collect();
    let scored: Vec<f64> = chunks.iter().filter(|c| c.sdr.is_scored()).map(|c| c.sdr.db).collect();
    let median_db = median(&scored).ok_or_else(|| Error::Numerical("every chunk reference is silent".into()))?;
    Ok(Csdr { median_db, chunks })
}

/// cSDR on 1-second chunks.
pub fn csdr(reference: &Waveform, estimate: &Waveform) -> Result<Csdr> {
    csdr_with_chunk(reference, estimate, reference.sample_rate() as usize)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackScore {
    pub track: String,
    pub sdr: Sdr,
    pub csdr: Option<Csdr>,
}

impl TrackScore {
    /// Scores one track; tracks shorter than a second or silent throughout
    /// get no cSDR.
    pub fn compute(track: impl Into<String>, reference: &Waveform, estimate: &Waveform) -> Result<Self> {
        let sdr = sdr(reference, estimate)?;
        let csdr = match csdr(reference, estimate) {
            Ok(c) => Some(c),
            Err(Error::Data(_) | Error::Numerical(_)) => None,
            Err(other) => return Err(other),
        };
        Ok(Self {
            track: track.into(),
            sdr,
            csdr,
        })
    }

    pub fn chunk_count(&self) -> usize {
        self.csdr.as_ref().map_or(0, |c| c.chunks.len())
    }
}

/// Per-track scores and their aggregates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SdrReport {
    pub tracks: Vec<TrackScore>,
    /// Mean of scored per-track SDRs.
    pub usdr: Option<f64>,
    /// Median over every scored chunk of every track.
    pub csdr_pooled: Option<f64>,
    /// Median of per-track chunk medians.
    pub csdr_track_median: Option<f64>,
}

impl SdrReport {
    pub fn new(tracks: Vec<TrackScore>) -> Self {
        let sdrs: Vec<Sdr> = tracks.iter().map(|t| t.sdr).collect();
        let pooled: Vec<f64> = tracks.iter().filter_map(|t| t.csdr.as_ref()).flat_map(Csdr::scored_db).collect();
        let medians: Vec<f64> = tracks.iter().filter_map(|t| t.csdr.as_ref().map(|c| c.median_db)).collect();
        Self {
            usdr: mean_scored(&sdrs),
            csdr_pooled: median(&pooled),
            csdr_track_median: median(&medians),
            tracks,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn w(data: Vec<f64>) -> Waveform {
        Waveform::new(Array2::from_shape_vec((1, data.len()), data).unwrap(), 4).unwrap()
    }

    #[test]
    fn half_estimate_is_six_db() {
        let r = w(vec![1.0, -2.0, 0.5, 3.0]);
        let e = r.scaled(0.5).unwrap();
        let s = sdr(&r, &e).unwrap();
        assert!((s.db - 20.0 * 2f64.log10()).abs() < 1e-12);
        assert_eq!(s.status, SdrStatus::Finite);
    }

    #[test]
    fn perfect_estimate_is_capped() {
        let r = w(vec![1.0, -2.0, 0.5, 3.0]);
        assert_eq!(sdr(&r, &r).unwrap(), Sdr { db: 100.0, status: SdrStatus::Capped });
    }

    #[test]
    fn silent_reference_is_flagged() {
        let r = w(vec![0.0; 4]);
        let s = sdr(&r, &w(vec![1.0; 4])).unwrap();
        assert_eq!(s.status, SdrStatus::Silent);
        assert!(usdr(&[(r.clone(), r)]).is_err());
    }

    #[test]
    fn mismatched_shapes_are_rejected() {
        assert!(sdr(&w(vec![1.0; 4]), &w(vec![1.0; 5])).is_err());
    }

    #[test]
    fn median_conventions() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn short_input_has_no_chunks() {
        assert!(matches!(csdr(&w(vec![1.0; 3]), &w(vec![1.0; 3])), Err(Error::Data(_))));
    }
}
