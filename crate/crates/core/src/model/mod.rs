//! Network assembly, chunked inference, checkpoints and parameter audit.

pub mod checkpoint;
pub mod config;
pub mod estimator;
pub mod inspect;
pub mod net;
pub mod separate;

pub use checkpoint::{Checkpoint, TrainingMeta};
pub use config::{BlockVersion, ModelConfig, Source};
pub use estimator::{Estimator, IdentityEstimator, SilenceEstimator};
pub use inspect::{format_table, param_table, ParamRow};
pub use net::{Architecture, DttNet, SkipSource};
pub use separate::{separate, DEFAULT_OVERLAP};
