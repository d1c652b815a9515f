//! Convolutional building blocks of the band-split U-Net.
//!
//! Every layer works on `[batch, channels, freq, time]` arrays and exposes a
//! forward pass, a caching forward pass for training and a matching backward
//! pass that accumulates parameter gradients.

use ndarray::Array4;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::float::Float;
use crate::params::{Grads, ParamStore};

pub mod activation;
pub mod conv;
pub mod norm;
pub mod sampling;
pub mod tfc;

pub use activation::Activation;
pub use conv::{Conv2d, ConvGeometry, ConvTranspose2d};
pub use norm::GroupNorm;
pub use sampling::{Downsample, Upsample};
pub use tfc::{ConvUnit, Tdf, Tfc, TfcTdf};

pub trait Layer<T: Float> {
    type Cache;

    fn forward(&self, ps: &ParamStore<T>, x: &Array4<T>) -> Result<Array4<T>>;

    fn forward_train(&self, ps: &ParamStore<T>, x: &Array4<T>) -> Result<(Array4<T>, Self::Cache)>;

    /// Returns the gradient with respect to the input.
    fn backward(&self, ps: &ParamStore<T>, cache: Self::Cache, dy: &Array4<T>, grads: &mut Grads<T>) -> Array4<T>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum NormKind {
    #[default]
    Instance,
    None,
}

/// Shape of one TFC-TDF block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockConfig {
    pub channels: usize,
    pub freq: usize,
    pub bottleneck_factor: usize,
    pub activation: Activation,
    pub norm: NormKind,
}
