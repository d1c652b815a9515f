use std::fmt::Write as _;
use std::path::PathBuf;

use clap::Args;
use dttnet::data::trackset::Split;
use dttnet::data::{overlay_all, overlay_pattern, PatternBank, PatternSplit, TrackSet};
use dttnet::metrics::{SdrReport, TrackScore};
use dttnet::model::separate;
use dttnet::{Error, Result};

use super::{load_model, write_text};
use crate::config::RunConfig;

/// `--pattern All` overlays every pattern of the bank.
pub const ALL_PATTERNS: &str = "All";

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Checkpoint path, or `identity`.
    #[arg(long)]
    model: String,
    /// Directory of track directories.
    #[arg(long)]
    data: PathBuf,
    /// Report directory.
    #[arg(long)]
    out: PathBuf,
    /// Pattern bank to overlay on every song before separation.
    #[arg(long, requires = "pattern")]
    patterns: Option<PathBuf>,
    /// Pattern name, or `All`.
    #[arg(long, requires = "patterns")]
    pattern: Option<String>,
    /// Pattern split whose segments are overlaid.
    #[arg(long, default_value = "test", value_parser = parse_split)]
    split: PatternSplit,
    #[arg(long)]
    overlap: Option<f64>,
}

pub fn parse_split(s: &str) -> std::result::Result<PatternSplit, String> {
    match s {
        "train" => Ok(PatternSplit::Train),
        "valid" => Ok(PatternSplit::Valid),
        "test" => Ok(PatternSplit::Test),
        other => Err(format!("unknown split {other:?} (train, valid, test)")),
    }
}

fn db(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.3}"))
}

pub fn summary_table(report: &SdrReport) -> String {
    let width = report.tracks.iter().map(|t| t.track.len()).max().unwrap_or(0).max(5);
    let mut s = String::new();
    let _ = writeln!(s, "{:<width$}  {:>10}  {:>10}  {:>6}", "track", "SDR dB", "cSDR dB", "chunks");
    for t in &report.tracks {
        let sdr = if t.sdr.is_scored() { format!("{:.3}", t.sdr.db) } else { "silent".into() };
        let _ = writeln!(
            s,
            "{:<width$}  {:>10}  {:>10}  {:>6}",
            t.track,
            sdr,
            db(t.csdr.as_ref().map(|c| c.median_db)),
            t.chunk_count()
        );
    }
    let _ = writeln!(s, "uSDR {}  cSDR(pooled) {}  cSDR(track median) {}", db(report.usdr), db(report.csdr_pooled), db(report.csdr_track_median));
    s
}

pub fn run(cfg: &RunConfig, args: &EvaluateArgs) -> Result<()> {
    let est = load_model(&args.model, &cfg.model)?;
    let model_cfg = est.model_config().clone();
    let mut effective = cfg.clone();
    effective.model = model_cfg.clone();
    if let Some(o) = args.overlap {
        effective.inference.overlap = o;
    }
    effective.validate()?;
    let sr = model_cfg.spectral.sample_rate;
    let set = TrackSet::load_dir(&args.data, Split::Test, sr)?;
    let bank = match &args.patterns {
        Some(dir) => Some(PatternBank::load_dir(dir, sr, cfg.seed)?),
        None => None,
    };
    let mut scores = Vec::with_capacity(set.tracks.len());
    for track in &set.tracks {
        let target = track.stem(model_cfg.source)?;
        let mixture = match (&bank, args.pattern.as_deref()) {
            (Some(bank), Some(ALL_PATTERNS)) => {
                overlay_all(&track.mixture, &track.name, bank, args.split, &cfg.mixing, cfg.seed)?.mixture
            }
            (Some(bank), Some(p)) => {
                overlay_pattern(&track.mixture, &track.name, bank, p, args.split, &cfg.mixing, cfg.seed)?.mixture
            }
            _ => track.mixture.clone(),
        };
        let estimate = separate(est.as_ref(), &mixture, effective.inference.overlap)?;
        let target = target.with_channels(estimate.channels())?;
        let score = TrackScore::compute(&track.name, &target, &estimate)?;
        log::info!("{}: SDR {:.3} dB", track.name, score.sdr.db);
        scores.push(score);
    }
    let report = SdrReport::new(scores);

    let mut lines = String::new();
    let mut chunks = String::new();
    for t in &report.tracks {
        let line = serde_json::json!({
            "track": t.track,
            "sdr_db": t.sdr.db,
            "status": t.sdr.status,
            "csdr_db": t.csdr.as_ref().map(|c| c.median_db),
            "chunks": t.chunk_count(),
        });
        let _ = writeln!(lines, "{line}");
        for c in t.csdr.iter().flat_map(|c| &c.chunks) {
            let row = serde_json::json!({
                "track": t.track,
                "index": c.index,
                "start": c.start,
                "sdr_db": c.sdr.db,
                "status": c.sdr.status,
            });
            let _ = writeln!(chunks, "{row}");
        }
    }
    let aggregate = serde_json::json!({
        "aggregate": {
            "tracks": report.tracks.len(),
            "usdr_db": report.usdr,
            "csdr_pooled_db": report.csdr_pooled,
            "csdr_track_median_db": report.csdr_track_median,
            "pattern": args.pattern,
        }
    });
    let _ = writeln!(lines, "{aggregate}");
    write_text(&args.out.join("report.jsonl"), &lines)?;
    write_text(&args.out.join("chunks.jsonl"), &chunks)?;
    let table = summary_table(&report);
    write_text(&args.out.join("summary.txt"), &table)?;
    effective.write_snapshot(&args.out)?;
    print!("{table}");
    if report.usdr.is_none() {
        return Err(Error::Numerical("every reference track is silent".into()));
    }
    Ok(())
}
