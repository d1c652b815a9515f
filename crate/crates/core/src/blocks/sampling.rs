//! Stride-2 resampling between U-Net levels.

use ndarray::Array4;

use super::conv::{Conv2d, ConvGeometry, ConvTranspose2d};
use super::Layer;
use crate::error::{Error, Result};
use crate::float::Float;
use crate::params::{Grads, ParamBuilder, ParamStore};

/// Halves F and T and adds `growth` channels.
#[derive(Clone, Debug)]
pub struct Downsample {
    conv: Conv2d,
}

impl Downsample {
    pub fn new<T: Float>(pb: &mut ParamBuilder<'_, T>, channels: usize, growth: usize) -> Result<Self> {
        Ok(Self {
            conv: Conv2d::new(pb, channels, channels + growth, ConvGeometry::DOWN_3X3)?,
        })
    }

    pub fn conv(&self) -> &Conv2d {
        &self.conv
    }
}

impl<T: Float> Layer<T> for Downsample {
    type Cache = Array4<T>;

    fn forward(&self, ps: &ParamStore<T>, x: &Array4<T>) -> Result<Array4<T>> {
        let (_, _, f, t) = x.dim();
        if f % 2 != 0 || t % 2 != 0 {
            return Err(Error::shape(format!("cannot downsample odd extent {f}×{t}")));
        }
        self.conv.forward(ps, x)
    }

    fn forward_train(&self, ps: &ParamStore<T>, x: &Array4<T>) -> Result<(Array4<T>, Array4<T>)> {
        Ok((Layer::<T>::forward(self, ps, x)?, x.clone()))
    }

    fn backward(&self, ps: &ParamStore<T>, x: Array4<T>, dy: &Array4<T>, grads: &mut Grads<T>) -> Array4<T> {
        self.conv.backward_from_input(ps, &x, dy, grads)
    }
}

/// Doubles F and T and removes `growth` channels.
#[derive(Clone, Debug)]
pub struct Upsample {
    conv: ConvTranspose2d,
}

impl Upsample {
    pub fn new<T: Float>(pb: &mut ParamBuilder<'_, T>, channels: usize, growth: usize) -> Result<Self> {
        if channels <= growth {
            return Err(Error::config(format!(
                "upsampling {channels} channels by removing {growth} leaves none"
            )));
        }
        Ok(Self {
            conv: ConvTranspose2d::new(pb, channels, channels - growth, ConvGeometry::DOWN_3X3)?,
        })
    }

    pub fn conv(&self) -> &ConvTranspose2d {
        &self.conv
    }
}

impl<T: Float> Layer<T> for Upsample {
    type Cache = Array4<T>;

    fn forward(&self, ps: &ParamStore<T>, x: &Array4<T>) -> Result<Array4<T>> {
        self.conv.forward(ps, x)
    }

    fn forward_train(&self, ps: &ParamStore<T>, x: &Array4<T>) -> Result<(Array4<T>, Array4<T>)> {
        self.conv.forward_train(ps, x)
    }

    fn backward(&self, ps: &ParamStore<T>, x: Array4<T>, dy: &Array4<T>, grads: &mut Grads<T>) -> Array4<T> {
        self.conv.backward(ps, x, dy, grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    #[test]
    fn shapes_round_trip() {
        let mut ps = ParamStore::<f32>::new();
        let mut rng = seed::rng(1, &[]);
        let mut pb = ParamBuilder::new(&mut ps, &mut rng);
        let down = Downsample::new(&mut pb.child("down"), 8, 4).unwrap();
        let up = Upsample::new(&mut pb.child("up"), 12, 4).unwrap();
        let x = Array4::<f32>::ones((1, 8, 16, 6));
        let y = down.forward(&ps, &x).unwrap();
        assert_eq!(y.dim(), (1, 12, 8, 3));
        assert_eq!(up.forward(&ps, &y).unwrap().dim(), (1, 8, 16, 6));
    }

    #[test]
    fn odd_extent_is_rejected() {
        let mut ps = ParamStore::<f32>::new();
        let mut rng = seed::rng(1, &[]);
        let down = Downsample::new(&mut ParamBuilder::new(&mut ps, &mut rng), 4, 4).unwrap();
        assert!(matches!(down.forward(&ps, &Array4::zeros((1, 4, 5, 4))), Err(Error::Shape(_))));
    }

    #[test]
    fn upsample_needs_spare_channels() {
        let mut ps = ParamStore::<f32>::new();
        let mut rng = seed::rng(1, &[]);
        assert!(Upsample::new(&mut ParamBuilder::new(&mut ps, &mut rng), 4, 4).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut ps = ParamStore::<f64>::new();
        let mut rng = seed::rng(2, &[]);
        let (down, up) = {
            let mut pb = ParamBuilder::new(&mut ps, &mut rng);
            (
                Downsample::new(&mut pb.child("down"), 3, 2).unwrap(),
                Upsample::new(&mut pb.child("up"), 5, 2).unwrap(),
            )
        };
        let x = Array4::from_shape_fn((2, 3, 6, 4), |(b, c, f, t)| ((b + 2 * c + 3 * f + 5 * t) % 7) as f64 - 3.0);
        let r = crate::gradcheck::check_layer(&down, &mut ps, &x, 10, &mut rng).unwrap();
        assert!(r.max_rel_err < 1e-6, "{r:?}");
        let y = Array4::from_shape_fn((1, 5, 3, 2), |(_, c, f, t)| (c as f64 - f as f64) * 0.3 + t as f64);
        let r = crate::gradcheck::check_layer(&up, &mut ps, &y, 10, &mut rng).unwrap();
        assert!(r.max_rel_err < 1e-6, "{r:?}");
    }
}
