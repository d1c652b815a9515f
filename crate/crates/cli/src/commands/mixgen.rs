use std::fs;
use std::path::PathBuf;

use clap::Args;
use dttnet::data::trackset::Split;
use dttnet::data::{overlay_all, overlay_pattern, Manifest, MixtureRecord, PatternBank, PatternSplit, TrackSet};
use dttnet::model::Source;
use dttnet::spectral::wav::{write_wav, WavFormat};
use dttnet::Result;

use super::evaluate::{parse_split, ALL_PATTERNS};
use super::io;
use crate::config::RunConfig;

pub const MANIFEST_NAME: &str = "manifest.toml";

#[derive(Args, Debug)]
pub struct MixgenArgs {
    /// One sub-directory of WAV segments per pattern.
    #[arg(long)]
    patterns: PathBuf,
    /// Directory of track directories.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Pattern name, or `All`.
    #[arg(long, default_value = ALL_PATTERNS)]
    pattern: String,
    #[arg(long, default_value = "test", value_parser = parse_split)]
    split: PatternSplit,
}

/// Writes `<out>/<track>/mixture.wav` with the overlay applied, copies the
/// stems beside it, and records every placement in `<out>/manifest.toml`.
/// A track that receives no segment is copied byte for byte.
pub fn run(cfg: &RunConfig, args: &MixgenArgs) -> Result<()> {
    let sr = cfg.model.spectral.sample_rate;
    let bank = PatternBank::load_dir(&args.patterns, sr, cfg.seed)?;
    let set = TrackSet::load_dir(&args.data, Split::Test, sr)?;
    let mut manifest = Manifest {
        seed: cfg.seed,
        zero_fraction: Some(cfg.mixing.zero_fraction),
        splits: bank.split_names(),
        mixtures: Vec::new(),
    };
    for track in &set.tracks {
        let src_dir = args.data.join(&track.name);
        let dst_dir = args.out.join(&track.name);
        fs::create_dir_all(&dst_dir).map_err(|e| io(&dst_dir, e))?;
        let overlay = if bank.is_empty() {
            None
        } else if args.pattern == ALL_PATTERNS {
            Some(overlay_all(&track.mixture, &track.name, &bank, args.split, &cfg.mixing, cfg.seed)?)
        } else {
            Some(overlay_pattern(&track.mixture, &track.name, &bank, &args.pattern, args.split, &cfg.mixing, cfg.seed)?)
        };
        let dst = dst_dir.join("mixture.wav");
        let placements = match overlay {
            Some(o) if !o.placements.is_empty() => {
                write_wav(&dst, &o.mixture, WavFormat::Float32)?;
                o.placements
            }
            _ => {
                fs::copy(src_dir.join("mixture.wav"), &dst).map_err(|e| io(&dst, e))?;
                Vec::new()
            }
        };
        for s in Source::ALL {
            let stem = src_dir.join(format!("{s}.wav"));
            if stem.exists() {
                let to = dst_dir.join(format!("{s}.wav"));
                fs::copy(&stem, &to).map_err(|e| io(&to, e))?;
            }
        }
        log::info!("{}: {} segments placed", track.name, placements.len());
        manifest.mixtures.push(MixtureRecord {
            track: track.name.clone(),
            file: format!("{}/mixture.wav", track.name),
            samples: track.len(),
            placements,
        });
    }
    manifest.save(args.out.join(MANIFEST_NAME))?;
    cfg.write_snapshot(&args.out)?;
    Ok(())
}
