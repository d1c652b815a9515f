use std::path::PathBuf;

use clap::Args;
use dttnet::model::{format_table, param_table, Checkpoint, DttNet, Source};
use dttnet::{Error, Result};

use crate::config::RunConfig;

#[derive(Args, Debug)]
pub struct InspectArgs {
    /// Shorthand for `--set model.source=<name>`.
    #[arg(long)]
    source: Option<Source>,
    /// Inspect a checkpoint instead of the configured model.
    #[arg(long)]
    model: Option<PathBuf>,
}

impl InspectArgs {
    pub fn overrides(&self) -> Vec<String> {
        self.source.map(|s| format!("model.source=\"{s}\"")).into_iter().collect()
    }
}

pub fn run(cfg: &RunConfig, args: &InspectArgs) -> Result<()> {
    let (rows, expected) = match &args.model {
        Some(p) => {
            let ck = Checkpoint::<f32>::load(p)?;
            (param_table(ck.to_net()?.params()), ck.config.param_count())
        }
        None => {
            let net = DttNet::<f32>::new(cfg.model.clone())?;
            (param_table(net.params()), cfg.model.param_count())
        }
    };
    let total: usize = rows.iter().map(|r| r.count).sum();
    if total != expected {
        return Err(Error::Numerical(format!("table sums to {total}, closed form gives {expected}")));
    }
    print!("{}", format_table(&rows));
    Ok(())
}
