//! Group normalization over `(channels-in-group, F, T)`; instance norm is the
//! one-channel-per-group case. Statistics accumulate in f64.

use ndarray::{Array1, Array2, Array4};
use rayon::prelude::*;

use super::Layer;
use crate::error::{Error, Result};
use crate::float::Float;
use crate::params::{Grads, ParamBuilder, ParamId, ParamStore};

pub const NORM_EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct GroupNorm {
    gamma: ParamId,
    beta: ParamId,
    channels: usize,
    groups: usize,
}

pub struct NormCache<T> {
    xhat: Array4<T>,
    /// `[batch × groups]`
    inv_std: Array2<f64>,
}

impl GroupNorm {
    pub fn new<T: Float>(pb: &mut ParamBuilder<'_, T>, channels: usize, groups: usize) -> Result<Self> {
        if groups == 0 || channels % groups != 0 {
            return Err(Error::config(format!(
                "{groups} groups do not divide {channels} channels"
            )));
        }
        Ok(Self {
            gamma: pb.ones("gamma", &[channels])?,
            beta: pb.zeros("beta", &[channels])?,
            channels,
            groups,
        })
    }

    pub fn instance<T: Float>(pb: &mut ParamBuilder<'_, T>, channels: usize) -> Result<Self> {
        Self::new(pb, channels, channels)
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    pub fn gamma(&self) -> ParamId {
        self.gamma
    }

    pub fn beta(&self) -> ParamId {
        self.beta
    }

    /// Normalized values before the affine step, plus `1/σ` per `(batch, group)`.
    pub fn normalize<T: Float>(&self, x: &Array4<T>) -> Result<(Array4<T>, Array2<f64>)> {
        let (b, c, f, t) = x.dim();
        if c != self.channels {
            return Err(Error::shape(format!(
                "norm expects {} channels, got {c}",
                self.channels
            )));
        }
        let mut xhat = x.as_standard_layout().into_owned();
        let group_len = (c / self.groups) * f * t;
        let inv: Vec<f64> = xhat
            .as_slice_mut()
            .expect("owned standard layout")
            .par_chunks_mut(group_len)
            .map(|chunk| {
                let n = chunk.len() as f64;
                let mean = chunk.iter().map(|v| v.as_f64()).sum::<f64>() / n;
                let var = chunk
                    .iter()
                    .map(|v| {
                        let d = v.as_f64() - mean;
                        d * d
                    })
                    .sum::<f64>()
                    / n;
                let inv = 1.0 / (var + NORM_EPS).sqrt();
                for v in chunk.iter_mut() {
                    *v = T::of((v.as_f64() - mean) * inv);
                }
                inv
            })
            .collect();
        Ok((xhat, Array2::from_shape_vec((b, self.groups), inv).expect("b·groups entries")))
    }

    fn affine<T: Float>(&self, ps: &ParamStore<T>, mut xhat: Array4<T>) -> Array4<T> {
        let gamma = ps.view1(self.gamma);
        let beta = ps.view1(self.beta);
        for mut sample in xhat.outer_iter_mut() {
            for (ch, mut plane) in sample.outer_iter_mut().enumerate() {
                let (g, bt) = (gamma[ch], beta[ch]);
                plane.mapv_inplace(|v| v * g + bt);
            }
        }
        xhat
    }
}

impl<T: Float> Layer<T> for GroupNorm {
    type Cache = NormCache<T>;

    fn forward(&self, ps: &ParamStore<T>, x: &Array4<T>) -> Result<Array4<T>> {
        let (xhat, _) = self.normalize(x)?;
        Ok(self.affine(ps, xhat))
    }

    fn forward_train(&self, ps: &ParamStore<T>, x: &Array4<T>) -> Result<(Array4<T>, NormCache<T>)> {
        let (xhat, inv_std) = self.normalize(x)?;
        let y = self.affine(ps, xhat.clone());
        Ok((y, NormCache { xhat, inv_std }))
    }

    fn backward(&self, ps: &ParamStore<T>, cache: NormCache<T>, dy: &Array4<T>, grads: &mut Grads<T>) -> Array4<T> {
        let NormCache { xhat, inv_std } = cache;
        let (b, c, f, t) = xhat.dim();
        let gamma = ps.view1(self.gamma);
        let dy = dy.as_standard_layout();

        let mut dgamma = Array1::<f64>::zeros(c);
        let mut dbeta = Array1::<f64>::zeros(c);
        let mut dxhat = Array4::<T>::zeros((b, c, f, t));
        for n in 0..b {
            for ch in 0..c {
                let xs = xhat.slice(ndarray::s![n, ch, .., ..]);
                let ds = dy.slice(ndarray::s![n, ch, .., ..]);
                let mut dst = dxhat.slice_mut(ndarray::s![n, ch, .., ..]);
                let (mut sg, mut sb) = (0.0, 0.0);
                ndarray::Zip::from(&mut dst).and(&xs).and(&ds).for_each(|d, &xh, &g| {
                    sg += g.as_f64() * xh.as_f64();
                    sb += g.as_f64();
                    *d = g * gamma[ch];
                });
                dgamma[ch] += sg;
                dbeta[ch] += sb;
            }
        }
        grads.view1_mut(self.gamma).zip_mut_with(&dgamma, |g, &v| *g += T::of(v));
        grads.view1_mut(self.beta).zip_mut_with(&dbeta, |g, &v| *g += T::of(v));

        let group_len = (c / self.groups) * f * t;
        let xs = xhat.as_slice().expect("standard layout");
        let inv = inv_std.as_slice().expect("standard layout");
        let mut dx = dxhat;
        dx.as_slice_mut()
            .expect("owned standard layout")
            .par_chunks_mut(group_len)
            .zip(xs.par_chunks(group_len))
            .zip(inv.par_iter())
            .for_each(|((d, xh), &inv)| {
                let n = d.len() as f64;
                let mut s1 = 0.0;
                let mut s2 = 0.0;
                for (dv, xv) in d.iter().zip(xh) {
                    s1 += dv.as_f64();
                    s2 += dv.as_f64() * xv.as_f64();
                }
                let (m1, m2) = (s1 / n, s2 / n);
                for (dv, xv) in d.iter_mut().zip(xh) {
                    *dv = T::of(inv * (dv.as_f64() - m1 - xv.as_f64() * m2));
                }
            });
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    #[test]
    fn groups_are_standardized() {
        let mut ps = ParamStore::<f64>::new();
        let mut rng = seed::rng(0, &[]);
        let gn = GroupNorm::new(&mut ParamBuilder::new(&mut ps, &mut rng), 8, 2).unwrap();
        let x = Array4::from_shape_fn((2, 8, 3, 5), |(b, c, f, t)| ((b * 31 + c * 7 + f * 3 + t) % 13) as f64 * 0.7 + c as f64);
        let y = gn.forward(&ps, &x).unwrap();
        for b in 0..2 {
            for g in 0..2 {
                let block = y.slice(ndarray::s![b, g * 4..(g + 1) * 4, .., ..]);
                let n = block.len() as f64;
                let mean = block.sum() / n;
                let var = block.mapv(|v| (v - mean).powi(2)).sum() / n;
                assert!(mean.abs() < 1e-4);
                assert!((var - 1.0).abs() < 1e-4, "{var}");
            }
        }
    }

    #[test]
    fn constant_input_maps_to_beta() {
        let mut ps = ParamStore::<f64>::new();
        let mut rng = seed::rng(0, &[]);
        let gn = GroupNorm::instance(&mut ParamBuilder::new(&mut ps, &mut rng), 3).unwrap();
        let y = gn.forward(&ps, &Array4::zeros((1, 3, 2, 2))).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_indivisible_groups() {
        let mut ps = ParamStore::<f32>::new();
        let mut rng = seed::rng(0, &[]);
        assert!(GroupNorm::new(&mut ParamBuilder::new(&mut ps, &mut rng), 6, 4).is_err());
    }
}
