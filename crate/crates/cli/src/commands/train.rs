use std::fmt::Write as _;
use std::path::PathBuf;

use clap::Args;
use dttnet::data::trackset::Split;
use dttnet::data::{PatternBank, TrackSet};
use dttnet::model::{Checkpoint, DttNet};
use dttnet::training::{fit, FitOptions, TrainData, TrainMode};
use dttnet::{Error, Result};

use super::{toml_path, write_text};
use crate::config::RunConfig;

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Dataset root holding `train/` and `valid/` track directories.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Pattern bank for the fine-tuning modes.
    #[arg(long)]
    patterns: Option<PathBuf>,
    #[arg(long)]
    mode: Option<TrainMode>,
    /// Continue from a `last.ckpt`.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Start from these weights (e.g. a base model before fine-tuning).
    #[arg(long, conflicts_with = "resume")]
    init: Option<PathBuf>,
    /// Output directory for checkpoints, logs and the config snapshot.
    #[arg(long)]
    out: PathBuf,
}

impl TrainArgs {
    pub fn overrides(&self) -> Vec<String> {
        let mut o = Vec::new();
        if let Some(d) = &self.data {
            o.push(format!("data.root={}", toml_path(d)));
        }
        if let Some(p) = &self.patterns {
            o.push(format!("data.patterns={}", toml_path(p)));
        }
        if let Some(m) = self.mode {
            let name = match m {
                TrainMode::Base => "base",
                TrainMode::Vc => "vc",
                TrainMode::Nvc => "nvc",
            };
            o.push(format!("train.mode=\"{name}\""));
        }
        o
    }
}

pub fn run(cfg: &RunConfig, args: &TrainArgs) -> Result<()> {
    let root = cfg
        .data
        .root
        .as_ref()
        .ok_or_else(|| Error::Config("training needs a dataset (--data or data.root)".into()))?;
    let sr = cfg.model.spectral.sample_rate;
    let train = TrackSet::load_dir(root.join("train"), Split::Train, sr)?;
    let valid_set = TrackSet::load_dir(root.join("valid"), Split::Valid, sr)?;
    let tc = cfg.train_config();
    let patterns = match (&cfg.data.patterns, tc.mode.is_finetune()) {
        (Some(dir), true) => Some(PatternBank::load_dir(dir, sr, cfg.seed)?),
        (None, true) => return Err(Error::Config("fine-tuning needs --patterns or data.patterns".into())),
        (_, false) => None,
    };
    let data = TrainData {
        valid: TrainData::valid_from(&valid_set, cfg.model.source)?,
        train,
        patterns,
    };
    cfg.write_snapshot(&args.out)?;

    let net = match &args.init {
        Some(p) => Checkpoint::<f32>::load_expecting(p, &cfg.model)?.to_net()?,
        None => DttNet::<f32>::new(cfg.model.clone())?,
    };
    log::info!(
        "training {} model ({} parameters), {} steps per epoch",
        cfg.model.source,
        net.param_count(),
        tc.steps_per_epoch()
    );
    let opts = FitOptions {
        checkpoint_dir: Some(args.out.clone()),
        resume: args.resume.clone(),
    };
    let out = fit(net, &tc, &data, &opts)?;

    let mut log_text = String::new();
    for e in &out.epochs {
        let _ = writeln!(log_text, "{e}");
    }
    write_text(&args.out.join("train.log"), &log_text)?;
    let mut audit = String::new();
    for e in &out.audit {
        let line = serde_json::json!({
            "epoch": e.epoch,
            "index": e.index,
            "track": e.track,
            "offset": e.offset,
            "pitch_semitones": e.augment.pitch_semitones,
            "stretch_percent": e.augment.stretch_percent,
            "pattern": e.pattern,
            "segment": e.segment,
        });
        let _ = writeln!(audit, "{line}");
    }
    write_text(&args.out.join("sampler-audit.jsonl"), &audit)?;
    let best_path = args.out.join("best.ckpt");
    if !best_path.exists() {
        out.best.save(&best_path)?;
    }
    match (out.state.best_epoch, out.state.best_usdr) {
        (Some(e), Some(u)) => println!("best epoch {e}: valid uSDR {u:.3} dB -> {}", best_path.display()),
        _ => println!("no epochs run; initial model -> {}", best_path.display()),
    }
    Ok(())
}
