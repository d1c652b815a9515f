pub mod evaluate;
pub mod inspect;
pub mod mixgen;
pub mod separate;
pub mod train;

use std::fs;
use std::path::Path;

use dttnet::model::{Checkpoint, Estimator, IdentityEstimator, ModelConfig};
use dttnet::{Error, Result};

/// `--model identity` selects a pass-through estimator built from the
/// configured model settings instead of a checkpoint.
pub const IDENTITY_MODEL: &str = "identity";

/// Loads a checkpoint stored in either precision.
pub fn load_model(spec: &str, config: &ModelConfig) -> Result<Box<dyn Estimator>> {
    if spec == IDENTITY_MODEL {
        return Ok(Box::new(IdentityEstimator { config: config.clone() }));
    }
    match Checkpoint::<f32>::load(spec) {
        Ok(ck) => Ok(Box::new(ck.to_net()?)),
        Err(Error::Checkpoint { reason, .. }) if reason.contains("stored as F64") => {
            Ok(Box::new(Checkpoint::<f64>::load(spec)?.to_net()?))
        }
        Err(e) => Err(e),
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| io(path, e))
}

pub fn io(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.into(),
        source,
    }
}

/// Quotes a path for use as a TOML override value.
pub fn toml_path(path: &Path) -> String {
    toml::Value::String(path.display().to_string()).to_string()
}
