//! Multitrack songs on disk and aligned random chunks drawn from them.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::patterns::{file_name, sorted_entries};
use crate::error::{Error, Result};
use crate::model::Source;
use crate::seed::Rng;
use crate::spectral::wav::read_wav_at;
use crate::spectral::Waveform;

/// Largest tolerated |mixture - Σ stems| before a consistency warning.
pub const MIXTURE_TOLERANCE: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    Valid,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Track {
    pub name: String,
    pub mixture: Waveform,
    pub stems: BTreeMap<Source, Waveform>,
}

impl Track {
    pub fn new(name: impl Into<String>, mixture: Waveform, stems: BTreeMap<Source, Waveform>) -> Result<Self> {
        let name = name.into();
        for (src, stem) in &stems {
            if stem.len() != mixture.len() || stem.sample_rate() != mixture.sample_rate() {
                return Err(Error::Data(format!(
                    "{name}: {src} stem has {} samples at {} Hz, mixture has {} at {} Hz",
                    stem.len(),
                    stem.sample_rate(),
                    mixture.len(),
                    mixture.sample_rate()
                )));
            }
        }
        Ok(Self { name, mixture, stems })
    }

    pub fn stem(&self, source: Source) -> Result<&Waveform> {
        self.stems
            .get(&source)
            .ok_or_else(|| Error::Data(format!("{}: no {source} stem", self.name)))
    }

    pub fn len(&self) -> usize {
        self.mixture.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Max |mixture - Σ stems|, when all four stems are present.
    pub fn mixture_residual(&self) -> Option<f64> {
        if self.stems.len() != Source::ALL.len() {
            return None;
        }
        let mut diff = self.mixture.samples().to_owned();
        for stem in self.stems.values() {
            if stem.channels() != self.mixture.channels() {
                return None;
            }
            diff -= &stem.samples();
        }
        Some(diff.iter().fold(0.0, |m, v| m.max(v.abs())))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrackSet {
    pub split: Split,
    pub tracks: Vec<Track>,
}

/// An aligned crop of one track.
#[derive(Clone, Debug, PartialEq)]
pub struct ChunkPair {
    pub track: usize,
    pub offset: usize,
    pub mixture: Waveform,
    pub target: Waveform,
}

impl TrackSet {
    /// One sub-directory per track holding `mixture.wav` and stems named
    /// `vocals.wav`, `drums.wav`, `bass.wav`, `other.wav` (missing stems are
    /// allowed). Tracks whose stems do not add up to the mixture are loaded
    /// with a warning.
    pub fn load_dir(dir: impl AsRef<Path>, split: Split, sample_rate: u32) -> Result<Self> {
        let dir = dir.as_ref();
        let mut tracks = Vec::new();
        for track_dir in sorted_entries(dir)?.into_iter().filter(|p| p.is_dir()) {
            let mix_path = track_dir.join("mixture.wav");
            if !mix_path.exists() {
                log::warn!("{}: no mixture.wav, skipped", track_dir.display());
                continue;
            }
            let mixture = read_wav_at(&mix_path, sample_rate)?;
            let mut stems = BTreeMap::new();
            for src in Source::ALL {
                let p = track_dir.join(format!("{src}.wav"));
                if p.exists() {
                    stems.insert(src, read_wav_at(&p, sample_rate)?);
                }
            }
            let track = Track::new(file_name(&track_dir), mixture, stems)?;
            if let Some(r) = track.mixture_residual() {
                if r > MIXTURE_TOLERANCE {
                    log::warn!("{}: mixture differs from the stem sum by {r:.2e}", track.name);
                }
            }
            tracks.push(track);
        }
        if tracks.is_empty() {
            return Err(Error::Data(format!("no tracks under {}", dir.display())));
        }
        Ok(Self { split, tracks })
    }

    /// Uniformly picks a track long enough for `len` samples, then a uniform
    /// start offset, and crops mixture and `source` stem at that offset.
    pub fn sample_chunk(&self, source: Source, len: usize, rng: &mut Rng) -> Result<ChunkPair> {
        let eligible: Vec<usize> = (0..self.tracks.len())
            .filter(|&i| {
                let ok = self.tracks[i].len() >= len && self.tracks[i].stems.contains_key(&source);
                if !ok {
                    log::debug!("{}: too short or no {source} stem for a {len}-sample chunk", self.tracks[i].name);
                }
                ok
            })
            .collect();
        if eligible.is_empty() {
            return Err(Error::Data(format!("no track holds a {len}-sample {source} chunk")));
        }
        let track = eligible[rng.random_range(0..eligible.len())];
        let t = &self.tracks[track];
        let offset = rng.random_range(0..=t.len() - len);
        Ok(ChunkPair {
            track,
            offset,
            mixture: t.mixture.segment(offset, len)?,
            target: t.stem(source)?.segment(offset, len)?,
        })
    }
}
