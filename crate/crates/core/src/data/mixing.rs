//! Pattern overlays.
//!
//! Training: one random b-train segment is truncated or zero-padded to the
//! chunk length and added to the chunk mixture. Evaluation: a random subset
//! of segments is laid end to end with zero gaps so that a fixed fraction of
//! the song-length overlay is silent, then added to the song.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::patterns::{normalize_pattern, PatternBank, PatternSplit, Segment};
use crate::error::{Error, Result};
use crate::seed::{self, Rng};
use crate::spectral::Waveform;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OverlayConfig {
    /// Share of the song-length overlay left silent.
    pub zero_fraction: f64,
    /// Per-segment gain range in dB; `[0, 0]` is unity gain.
    pub gain_db: [f64; 2],
    /// Cap on segments per evaluation overlay; `None` fills the non-silent budget.
    pub max_segments: Option<usize>,
}

impl Default for OverlayConfig {
    fn default() -> Self {
        Self {
            zero_fraction: 0.55,
            gain_db: [0.0, 0.0],
            max_segments: None,
        }
    }
}

impl OverlayConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.zero_fraction) {
            return Err(Error::config(format!("zero_fraction {} must be in [0, 1)", self.zero_fraction)));
        }
        if !(self.gain_db[0] <= self.gain_db[1]) {
            return Err(Error::config(format!("gain_db range {:?} is empty", self.gain_db)));
        }
        Ok(())
    }

    fn draw_gain(&self, rng: &mut Rng) -> f64 {
        let [lo, hi] = self.gain_db;
        let db = if lo < hi { rng.random_range(lo..hi) } else { lo };
        10f64.powf(db / 20.0)
    }
}

/// Where a piece of a segment landed in the output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub pattern: String,
    pub segment: String,
    /// First output sample covered.
    pub offset: usize,
    /// First segment sample used.
    pub start: usize,
    pub len: usize,
    pub gain: f64,
}

impl Placement {
    pub fn end(&self) -> usize {
        self.offset + self.len
    }
}

/// Whether the overlaid segment also joins the separation target.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TargetMode {
    /// The pattern is accompaniment; the target stays untouched.
    Accompaniment,
    /// The pattern counts as target (vocal chops in VC fine-tuning).
    Target,
}

fn conform(seg: &Waveform, like: &Waveform) -> Result<Waveform> {
    if seg.sample_rate() != like.sample_rate() {
        return Err(Error::SampleRate {
            expected: like.sample_rate(),
            actual: seg.sample_rate(),
        });
    }
    seg.with_channels(like.channels())
}

/// Cuts `seg` to at most `len` samples and places it at a uniform offset in
/// a `len`-sample window.
pub fn pad_or_truncate(seg: &Segment, len: usize, rng: &mut Rng) -> (usize, usize) {
    let n = seg.audio.len().min(len);
    let offset = rng.random_range(0..=len - n);
    (offset, n)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainMix {
    pub mixture: Waveform,
    pub target: Waveform,
    pub placement: Placement,
}

/// Adds one random b-train segment of `pattern` to a training chunk.
pub fn mix_train_pattern(
    mixture: &Waveform,
    target: &Waveform,
    bank: &PatternBank,
    pattern: &str,
    mode: TargetMode,
    cfg: &OverlayConfig,
    rng: &mut Rng,
) -> Result<TrainMix> {
    let segments = bank.segments(pattern, PatternSplit::Train)?;
    if segments.is_empty() {
        return Err(Error::Data(format!("pattern {pattern:?} has no training segments")));
    }
    let seg = &segments[rng.random_range(0..segments.len())];
    let (offset, len) = pad_or_truncate(seg, mixture.len(), rng);
    let gain = cfg.draw_gain(rng);
    let audio = conform(&seg.audio, mixture)?.segment(0, len)?.scaled(gain)?;
    let mut mixed = mixture.clone();
    mixed.add_at(&audio, offset)?;
    let mut tgt = target.clone();
    if mode == TargetMode::Target {
        tgt.add_at(&audio, offset)?;
    }
    Ok(TrainMix {
        mixture: mixed,
        target: tgt,
        placement: Placement {
            pattern: pattern.to_string(),
            segment: seg.name.clone(),
            offset,
            start: 0,
            len,
            gain,
        },
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOverlay {
    /// Song plus overlay.
    pub mixture: Waveform,
    /// The overlay alone, song length.
    pub overlay: Waveform,
    pub placements: Vec<Placement>,
}

impl EvalOverlay {
    /// Share of overlay samples not covered by any placement.
    pub fn zero_fraction(&self) -> f64 {
        let covered: usize = self.placements.iter().map(|p| p.len).sum();
        1.0 - covered as f64 / self.overlay.len() as f64
    }
}

/// Splits `total` into `parts` integers summing exactly to `total`,
/// proportional to uniform draws.
fn random_partition(total: usize, parts: usize, rng: &mut Rng) -> Vec<usize> {
    let u: Vec<f64> = (0..parts).map(|_| rng.random::<f64>() + f64::EPSILON).collect();
    let sum: f64 = u.iter().sum();
    let mut acc = 0.0;
    let mut prev = 0usize;
    u.iter()
        .map(|&v| {
            acc += v;
            let edge = ((acc / sum) * total as f64).round() as usize;
            let edge = edge.min(total);
            let g = edge - prev;
            prev = edge;
            g
        })
        .collect()
}

/// Overlays a random subset of `segments` on `song`.
///
/// Segments are taken in random order while they fit in the non-silent
/// budget `(1 - zero_fraction) · len`; the last one is cut to fill the
/// budget exactly. The silent remainder is split into random gaps before,
/// between and after the segments.
pub fn build_eval_mixture(
    song: &Waveform,
    pattern: &str,
    segments: &[Segment],
    cfg: &OverlayConfig,
    rng: &mut Rng,
) -> Result<EvalOverlay> {
    cfg.validate()?;
    let len = song.len();
    let budget = ((1.0 - cfg.zero_fraction) * len as f64).round() as usize;
    let mut order: Vec<usize> = (0..segments.len()).collect();
    order.shuffle(rng);
    let cap = cfg.max_segments.unwrap_or(usize::MAX);
    let mut chosen: Vec<(usize, usize)> = Vec::new();
    let mut used = 0;
    for i in order {
        if chosen.len() >= cap || used >= budget {
            break;
        }
        let n = segments[i].audio.len().min(budget - used);
        chosen.push((i, n));
        used += n;
    }
    if used < budget && !segments.is_empty() {
        log::warn!("pattern {pattern:?}: only {used} of {budget} non-silent samples available");
    }
    let gaps = random_partition(len - used, chosen.len() + 1, rng);
    let mut overlay = Waveform::zeros(song.channels(), len, song.sample_rate())?;
    let mut placements = Vec::with_capacity(chosen.len());
    let mut cursor = gaps[0];
    for (k, &(i, n)) in chosen.iter().enumerate() {
        let seg = &segments[i];
        let gain = cfg.draw_gain(rng);
        let piece = conform(&seg.audio, song)?.segment(0, n)?.scaled(gain)?;
        overlay.add_at(&piece, cursor)?;
        placements.push(Placement {
            pattern: pattern.to_string(),
            segment: seg.name.clone(),
            offset: cursor,
            start: 0,
            len: n,
            gain,
        });
        cursor += n + gaps[k + 1];
    }
    Ok(EvalOverlay {
        mixture: song.add(&overlay)?,
        overlay,
        placements,
    })
}

/// Generator for one pattern's overlay on one song; shared by single-pattern
/// and all-pattern overlays so the two agree.
pub fn overlay_rng(seed: u64, song: &str, pattern: &str) -> Rng {
    seed::rng(
        seed,
        &[seed::tag_str("overlay"), seed::tag_str(song), seed::tag_str(&normalize_pattern(pattern))],
    )
}

pub fn overlay_pattern(
    song: &Waveform,
    song_name: &str,
    bank: &PatternBank,
    pattern: &str,
    split: PatternSplit,
    cfg: &OverlayConfig,
    seed: u64,
) -> Result<EvalOverlay> {
    let segments = bank.segments(pattern, split)?;
    build_eval_mixture(song, pattern, segments, cfg, &mut overlay_rng(seed, song_name, pattern))
}

/// Every pattern of `bank` overlaid on the same song, each from its own stream.
pub fn overlay_all(
    song: &Waveform,
    song_name: &str,
    bank: &PatternBank,
    split: PatternSplit,
    cfg: &OverlayConfig,
    seed: u64,
) -> Result<EvalOverlay> {
    let mut overlay = Waveform::zeros(song.channels(), song.len(), song.sample_rate())?;
    let mut placements = Vec::new();
    for pattern in bank.names() {
        let one = overlay_pattern(song, song_name, bank, pattern, split, cfg, seed)?;
        overlay = overlay.add(&one.overlay)?;
        placements.extend(one.placements);
    }
    Ok(EvalOverlay {
        mixture: song.add(&overlay)?,
        overlay,
        placements,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partition_sums_exactly() {
        let mut rng = seed::rng(3, &[]);
        for total in [0, 1, 7, 1000] {
            for parts in 1..6 {
                assert_eq!(random_partition(total, parts, &mut rng).iter().sum::<usize>(), total);
            }
        }
    }

    #[test]
    fn no_segments_leave_the_song_alone() {
        let song = Waveform::new(ndarray::Array2::from_elem((2, 100), 0.25), 44_100).unwrap();
        let out = build_eval_mixture(&song, "horns", &[], &OverlayConfig::default(), &mut seed::rng(0, &[])).unwrap();
        assert_eq!(out.mixture, song);
        assert!(out.placements.is_empty());
    }

    #[test]
    fn bad_zero_fraction_is_a_config_error() {
        let cfg = OverlayConfig {
            zero_fraction: 1.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
