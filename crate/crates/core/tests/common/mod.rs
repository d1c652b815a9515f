//! Synthetic fixtures shared by the integration test targets.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::f64::consts::PI;

use dttnet::data::{PatternBank, Segment, Splits, Track, TrackSet};
use dttnet::data::trackset::Split;
use dttnet::model::{ModelConfig, Source};
use dttnet::seed::{self, Rng};
use dttnet::spectral::Waveform;
use dttnet::training::{TrainData, TrainExample, ValidTrack};
use ndarray::Array2;
use rand::Rng as _;

/// Stereo sum of sinusoids centred on the given analysis bins of a
/// `window`-point transform, with random phases and amplitudes in [0.1, 0.3).
pub fn bin_tones(len: usize, sr: u32, window: usize, bins: &[f64], rng: &mut Rng) -> Array2<f64> {
    let parts: Vec<(f64, f64, f64)> = bins
        .iter()
        .map(|&b| (b * sr as f64 / window as f64, rng.random_range(0.0..2.0 * PI), rng.random_range(0.1..0.3)))
        .collect();
    Array2::from_shape_fn((2, len), |(c, i)| {
        parts
            .iter()
            .map(|&(f, p, a)| a * (2.0 * PI * f * i as f64 / sr as f64 + p + 0.5 * c as f64).sin())
            .sum()
    })
}

/// Target tones in low bins, interference in higher bins.
pub fn two_band(cfg: &ModelConfig, len: usize, seed_: u64) -> (Waveform, Waveform) {
    let sr = cfg.spectral.sample_rate;
    let n = cfg.spectral.window_size;
    let mut rng = seed::rng(seed_, &[]);
    let target = bin_tones(len, sr, n, &[3.0, 7.0], &mut rng);
    let other = bin_tones(len, sr, n, &[12.0, 20.0], &mut rng);
    (Waveform::new(target, sr).unwrap(), Waveform::new(other, sr).unwrap())
}

pub fn example(cfg: &ModelConfig, seed_: u64) -> TrainExample {
    let (t, o) = two_band(cfg, cfg.chunk_samples(), seed_);
    TrainExample {
        id: format!("synthetic-{seed_}"),
        mixture: t.add(&o).unwrap(),
        target: t,
    }
}

pub fn track(cfg: &ModelConfig, name: &str, len: usize, seed_: u64) -> Track {
    let (t, o) = two_band(cfg, len, seed_);
    let mut stems = BTreeMap::new();
    stems.insert(Source::Vocals, t.clone());
    stems.insert(Source::Other, o.clone());
    Track::new(name, t.add(&o).unwrap(), stems).unwrap()
}

pub fn train_data(cfg: &ModelConfig, patterns: Option<PatternBank>) -> TrainData {
    let len = 4 * cfg.chunk_samples();
    let train = TrackSet {
        split: Split::Train,
        tracks: (0..3).map(|i| track(cfg, &format!("train{i}"), len, 100 + i)).collect(),
    };
    let valid_set = TrackSet {
        split: Split::Valid,
        tracks: (0..2).map(|i| track(cfg, &format!("valid{i}"), 3 * cfg.chunk_samples() / 2, 200 + i)).collect(),
    };
    TrainData {
        valid: TrainData::valid_from(&valid_set, Source::Vocals).unwrap(),
        train,
        patterns,
    }
}

pub fn noise(len: usize, sr: u32, seed_: u64) -> Waveform {
    let mut rng = seed::rng(seed_, &[]);
    Waveform::new(Array2::from_shape_fn((2, len), |_| rng.random_range(-0.1..0.1)), sr).unwrap()
}

/// A bank whose patterns each hold a few short noise segments in every split.
pub fn pattern_bank(names: &[&str], sr: u32, seg_len: usize) -> PatternBank {
    let mut bank = PatternBank::new();
    for (p, name) in names.iter().enumerate() {
        let segs = |split: u64| -> Vec<Segment> {
            (0..3)
                .map(|k| Segment {
                    name: format!("{name}-{split}-{k}.wav"),
                    audio: noise(seg_len, sr, 1000 * p as u64 + 10 * split + k),
                })
                .collect()
        };
        bank.insert(
            *name,
            Splits {
                train: segs(0),
                valid: segs(1),
                test: segs(2),
            },
        );
    }
    bank
}

pub fn valid_identity(mix: &Waveform) -> ValidTrack {
    ValidTrack {
        name: "same".into(),
        mixture: mix.clone(),
        target: mix.clone(),
    }
}
