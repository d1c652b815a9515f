//! Run configuration: one TOML file holding the model, training, mixing and
//! path settings, with `--set section.key=value` overrides on top.

use std::fs;
use std::path::{Path, PathBuf};

use dttnet::data::OverlayConfig;
use dttnet::model::{ModelConfig, Source, DEFAULT_OVERLAP};
use dttnet::training::TrainConfig;
use dttnet::{Error, Result};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

pub const SNAPSHOT_NAME: &str = "effective-config.toml";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataPaths {
    /// Dataset root with `train/` and `valid/` track directories.
    pub root: Option<PathBuf>,
    /// One sub-directory of WAV segments per pattern.
    pub patterns: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceConfig {
    /// Chunk overlap for full-song separation, in [0, 1).
    pub overlap: f64,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self { overlap: DEFAULT_OVERLAP }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root of every random stream: chunk sampling, pattern splits, overlays.
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub mixing: OverlayConfig,
    pub inference: InferenceConfig,
    pub data: DataPaths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::for_source(Source::Vocals)
    }
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

/// Parses the right-hand side of an override as a TOML value, falling back
/// to a bare string (`mode=vc` and `mode="vc"` mean the same).
fn parse_value(raw: &str) -> Value {
    toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

fn set_path(table: &mut Table, key: &str, value: Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|k| !k.is_empty()).ok_or_else(|| config_err(format!("empty key in {key:?}")))?;
    let mut cur = table;
    for p in parts {
        let slot = cur.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = slot
            .as_table_mut()
            .ok_or_else(|| config_err(format!("{key}: {p} is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// Recursively lays `over` on top of `base`.
fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

impl RunConfig {
    /// Defaults for one source model (bass uses a narrower crop and bottleneck).
    pub fn for_source(source: Source) -> Self {
        Self {
            seed: 0,
            model: ModelConfig::for_source(source),
            train: TrainConfig::default(),
            mixing: OverlayConfig::default(),
            inference: InferenceConfig::default(),
            data: DataPaths::default(),
        }
    }

    /// Builds the configuration from an optional file and `key=value`
    /// overrides. Defaults follow `model.source`, so setting the source to
    /// bass also selects its crop and bottleneck unless they are given.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut user = match file {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| Error::Io { path: p.into(), source: e })?;
                toml::from_str::<Table>(&text).map_err(|e| config_err(format!("{}: {e}", p.display())))?
            }
            None => Table::new(),
        };
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| config_err(format!("override {o:?} is not key=value")))?;
            set_path(&mut user, k.trim(), parse_value(v.trim()))?;
        }
        let source = match user.get("model").and_then(|m| m.get("source")) {
            Some(v) => v.clone().try_into::<Source>().map_err(|e| config_err(format!("model.source: {e}")))?,
            None => Source::Vocals,
        };
        let mut table = Table::try_from(Self::for_source(source)).map_err(|e| config_err(e.to_string()))?;
        merge(&mut table, user);
        let cfg: Self = Value::Table(table).try_into().map_err(|e| config_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train_config().validate()?;
        self.mixing.validate()?;
        if !(0.0..1.0).contains(&self.inference.overlap) {
            return Err(config_err(format!("inference.overlap {} must be in [0, 1)", self.inference.overlap)));
        }
        Ok(())
    }

    /// Training settings with the run-wide seed and mixing filled in.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            overlay: self.mixing.clone(),
            ..self.train.clone()
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| config_err(e.to_string()))
    }

    /// Writes the effective configuration into `dir`.
    pub fn write_snapshot(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.into(), source: e })?;
        let path = dir.join(SNAPSHOT_NAME);
        fs::write(&path, self.to_toml()?).map_err(|e| Error::Io { path: path.clone(), source: e })?;
        Ok(path)
    }
}
