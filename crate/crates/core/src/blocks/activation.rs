use std::f64::consts::{FRAC_1_SQRT_2, PI};

use ndarray::{Array, Dimension, Zip};
use serde::{Deserialize, Serialize};

use crate::float::Float;

/// Nonlinearity used inside the conv sub-blocks and the TDF bottleneck.
/// Both variants map 0 to 0.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    /// Exact (erf) GELU.
    #[default]
    Gelu,
    Relu,
}

impl Activation {
    #[inline]
    pub fn apply<T: Float>(self, x: T) -> T {
        match self {
            Activation::Gelu => {
                let v = x.as_f64();
                T::of(0.5 * v * (1.0 + libm::erf(v * FRAC_1_SQRT_2)))
            }
            Activation::Relu => x.max(T::zero()),
        }
    }

    #[inline]
    pub fn derivative<T: Float>(self, x: T) -> T {
        match self {
            Activation::Gelu => {
                let v = x.as_f64();
                let cdf = 0.5 * (1.0 + libm::erf(v * FRAC_1_SQRT_2));
                let pdf = (-0.5 * v * v).exp() / (2.0 * PI).sqrt();
                T::of(cdf + v * pdf)
            }
            Activation::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
        }
    }

    pub fn forward<T: Float, D: Dimension>(self, x: &Array<T, D>) -> Array<T, D> {
        let mut y = x.clone();
        y.par_mapv_inplace(|v| self.apply(v));
        y
    }

    /// `dy ⊙ act'(pre)`
    pub fn backward<T: Float, D: Dimension>(self, pre: &Array<T, D>, dy: &Array<T, D>) -> Array<T, D> {
        let mut out = dy.clone();
        Zip::from(&mut out).and(pre).par_for_each(|d, &p| *d *= self.derivative(p));
        out
    }
}
