//! AdamW with decoupled weight decay.

use ndarray::{ArrayD, Zip};

use crate::error::{Error, Result};
use crate::float::Float;
use crate::params::{Grads, ParamStore};

use super::TrainConfig;

const MOMENT1: &str = "adamw.m.";
const MOMENT2: &str = "adamw.v.";

#[derive(Clone, Debug)]
pub struct AdamW<T> {
    pub learning_rate: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub weight_decay: f64,
    /// Updates applied so far.
    pub step: u64,
    m: Vec<ArrayD<T>>,
    v: Vec<ArrayD<T>>,
}

impl<T: Float> AdamW<T> {
    pub fn new(params: &ParamStore<T>, cfg: &TrainConfig) -> Self {
        let zeros = || params.iter().map(|p| ArrayD::zeros(p.value.raw_dim())).collect();
        Self {
            learning_rate: cfg.learning_rate,
            betas: (cfg.betas[0], cfg.betas[1]),
            eps: cfg.eps,
            weight_decay: cfg.weight_decay,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// `p ← p − lr·wd·p − lr·m̂/(√v̂ + ε)` with bias-corrected moments.
    pub fn update(&mut self, params: &mut ParamStore<T>, grads: &Grads<T>) {
        self.step += 1;
        let (b1, b2) = self.betas;
        let t = self.step as i32;
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let lr = self.learning_rate;
        let decay = T::of(1.0 - lr * self.weight_decay);
        let (tb1, tb2) = (T::of(b1), T::of(b2));
        let (one_b1, one_b2) = (T::of(1.0 - b1), T::of(1.0 - b2));
        let (lr_t, c1_t, c2_t, eps_t) = (T::of(lr), T::of(c1), T::of(c2), T::of(self.eps));
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads.arrays())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            Zip::from(&mut p.value).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = tb1 * *m + one_b1 * g;
                *v = tb2 * *v + one_b2 * g * g;
                let m_hat = *m / c1_t;
                let v_hat = *v / c2_t;
                *p = *p * decay - lr_t * m_hat / (v_hat.sqrt() + eps_t);
            });
        }
    }

    /// Moments as named arrays for a checkpoint.
    pub fn to_arrays(&self, params: &ParamStore<T>) -> Vec<(String, ArrayD<T>)> {
        let names: Vec<&str> = params.iter().map(|p| p.name.as_str()).collect();
        let m = names.iter().zip(&self.m).map(|(n, a)| (format!("{MOMENT1}{n}"), a.clone()));
        let v = names.iter().zip(&self.v).map(|(n, a)| (format!("{MOMENT2}{n}"), a.clone()));
        m.chain(v).collect()
    }

    /// Restores moments written by [`AdamW::to_arrays`].
    pub fn load_arrays(&mut self, params: &ParamStore<T>, arrays: &[(String, ArrayD<T>)], step: u64) -> Result<()> {
        for (name, a) in arrays {
            let (slot, pname) = if let Some(rest) = name.strip_prefix(MOMENT1) {
                (&mut self.m, rest)
            } else if let Some(rest) = name.strip_prefix(MOMENT2) {
                (&mut self.v, rest)
            } else {
                continue;
            };
            let id = params
                .id_of(pname)
                .ok_or_else(|| Error::Data(format!("optimizer state for unknown parameter {pname}")))?;
            if slot[id.index()].shape() != a.shape() {
                return Err(Error::shape(format!("optimizer state {name} has shape {:?}", a.shape())));
            }
            slot[id.index()] = a.clone();
        }
        self.step = step;
        Ok(())
    }
}
