use ndarray::Array4;

use crate::error::Result;
use crate::float::Float;

use super::config::ModelConfig;
use super::net::DttNet;

/// Anything that maps a batch of packed mixture spectrograms `[B, C, F, T]`
/// to target spectrograms of the same shape.
pub trait Estimator: Sync {
    fn model_config(&self) -> &ModelConfig;

    fn estimate(&self, x: &Array4<f64>) -> Result<Array4<f64>>;
}

impl<T: Float> Estimator for DttNet<T> {
    fn model_config(&self) -> &ModelConfig {
        self.config()
    }

    fn estimate(&self, x: &Array4<f64>) -> Result<Array4<f64>> {
        let y = self.forward(&x.mapv(T::of))?;
        Ok(y.mapv(|v| v.as_f64()))
    }
}

/// Returns its input: the separated "target" is the mixture itself.
#[derive(Clone, Debug)]
pub struct IdentityEstimator {
    pub config: ModelConfig,
}

impl Estimator for IdentityEstimator {
    fn model_config(&self) -> &ModelConfig {
        &self.config
    }

    fn estimate(&self, x: &Array4<f64>) -> Result<Array4<f64>> {
        Ok(x.clone())
    }
}

/// Always estimates silence.
#[derive(Clone, Debug)]
pub struct SilenceEstimator {
    pub config: ModelConfig,
}

impl Estimator for SilenceEstimator {
    fn model_config(&self) -> &ModelConfig {
        &self.config
    }

    fn estimate(&self, x: &Array4<f64>) -> Result<Array4<f64>> {
        Ok(Array4::zeros(x.raw_dim()))
    }
}
