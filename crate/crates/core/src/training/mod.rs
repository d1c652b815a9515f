//! Training: AdamW on an L1 waveform loss, epoch loop with validation-uSDR
//! checkpoint selection, and pattern fine-tuning.

mod fit;
mod loss;
pub mod optim;

use serde::{Deserialize, Serialize};

use crate::data::mixing::OverlayConfig;
use crate::error::{Error, Result};

pub use fit::{fit, single_threaded, validate, EpochLog, FitOptions, FitOutcome, SamplerEvent, TrainData, TrainState, ValidTrack};
pub use loss::{loss_and_grads, train_step, waveform_loss, StepReport, TrainExample};
pub use optim::AdamW;

pub const BASE_EPOCH_SIZE: usize = 3240;
pub const FINETUNE_EPOCH_SIZE: usize = 324;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainMode {
    #[default]
    Base,
    /// Fine-tune with pattern overlays; vocal chops count as target.
    Vc,
    /// Fine-tune with pattern overlays; vocal chops are never drawn.
    Nvc,
}

impl TrainMode {
    pub fn is_finetune(self) -> bool {
        self != TrainMode::Base
    }
}

impl std::str::FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "base" => Ok(TrainMode::Base),
            "vc" => Ok(TrainMode::Vc),
            "nvc" => Ok(TrainMode::Nvc),
            other => Err(Error::config(format!("unknown training mode {other:?} (base, vc, nvc)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub betas: [f64; 2],
    pub eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub grad_clip: Option<f64>,
    /// Chunks per epoch; `None` picks 3240 for base training, 324 for fine-tuning.
    pub epoch_size: Option<usize>,
    pub max_epochs: usize,
    pub batch_size: usize,
    /// Supplied by the surrounding run configuration, not read from `[train]`.
    #[serde(skip)]
    pub seed: u64,
    pub mode: TrainMode,
    /// Random pitch/stretch per training chunk.
    pub augment: bool,
    /// Pattern mixing for fine-tuning; supplied like `seed`.
    #[serde(skip)]
    pub overlay: OverlayConfig,
    /// Inference overlap used for validation.
    pub valid_overlap: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-4,
            betas: [0.9, 0.999],
            eps: 1e-8,
            weight_decay: 1e-2,
            grad_clip: Some(5.0),
            epoch_size: None,
            max_epochs: 10,
            batch_size: 4,
            seed: 0,
            mode: TrainMode::Base,
            augment: true,
            overlay: OverlayConfig::default(),
            valid_overlap: crate::model::DEFAULT_OVERLAP,
        }
    }
}

impl TrainConfig {
    pub fn epoch_size(&self) -> usize {
        self.epoch_size.unwrap_or(if self.mode.is_finetune() {
            FINETUNE_EPOCH_SIZE
        } else {
            BASE_EPOCH_SIZE
        })
    }

    /// Optimizer updates per epoch (the last batch may be short).
    pub fn steps_per_epoch(&self) -> usize {
        self.epoch_size().div_ceil(self.batch_size)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64, name: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(format!("{name} must be positive, got {v}")))
            }
        };
        positive(self.learning_rate, "learning_rate")?;
        positive(self.eps, "eps")?;
        if let Some(c) = self.grad_clip {
            positive(c, "grad_clip")?;
        }
        if !(0.0..1.0).contains(&self.betas[0]) || !(0.0..1.0).contains(&self.betas[1]) {
            return Err(Error::config(format!("betas {:?} must lie in [0, 1)", self.betas)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::config("weight_decay must be non-negative"));
        }
        if self.batch_size == 0 || self.epoch_size() == 0 {
            return Err(Error::config("batch_size and epoch_size must be positive"));
        }
        if !(0.0..1.0).contains(&self.valid_overlap) {
            return Err(Error::config("valid_overlap must be in [0, 1)"));
        }
        self.overlay.validate()
    }
}
