use std::path::PathBuf;

use clap::Args;
use dttnet::model::separate;
use dttnet::spectral::wav::{read_wav, write_wav, WavFormat};
use dttnet::Result;

use super::load_model;
use crate::config::RunConfig;

#[derive(Args, Debug)]
pub struct SeparateArgs {
    /// Checkpoint path, or `identity`.
    #[arg(long)]
    model: String,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Chunk overlap in [0, 1); defaults to `inference.overlap`.
    #[arg(long)]
    overlap: Option<f64>,
}

pub fn run(cfg: &RunConfig, args: &SeparateArgs) -> Result<()> {
    let est = load_model(&args.model, &cfg.model)?;
    let mut effective = cfg.clone();
    effective.model = est.model_config().clone();
    if let Some(o) = args.overlap {
        effective.inference.overlap = o;
    }
    effective.validate()?;
    let mix = read_wav(&args.input)?;
    let out = separate(est.as_ref(), &mix, effective.inference.overlap)?;
    let dir = args.output.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(".".as_ref());
    effective.write_snapshot(dir)?;
    write_wav(&args.output, &out, WavFormat::Float32)?;
    log::info!(
        "{}: {:.2} s separated into {}",
        args.input.display(),
        mix.duration_secs(),
        args.output.display()
    );
    Ok(())
}
