//! TFC, TDF and the TFC-TDF v3 residual block.

use ndarray::{Array1, Array2, Array4, Axis};

use super::conv::{Conv2d, ConvGeometry};
use super::norm::{GroupNorm, NormCache};
use super::{Activation, BlockConfig, Layer, NormKind};
use crate::error::{Error, Result};
use crate::float::Float;
use crate::linalg::gemm;
use crate::params::{Grads, ParamBuilder, ParamId, ParamStore};

/// Conv sub-blocks per TFC.
pub const TFC_CONVS: usize = 3;

/// Pre-activation conv sub-block: norm → activation → 3×3 conv.
#[derive(Clone, Debug)]
pub struct ConvUnit {
    norm: Option<GroupNorm>,
    activation: Activation,
    conv: Conv2d,
}

pub struct ConvUnitCache<T> {
    norm: Option<NormCache<T>>,
    pre_activation: Array4<T>,
}

impl ConvUnit {
    pub fn new<T: Float>(pb: &mut ParamBuilder<'_, T>, cfg: &BlockConfig) -> Result<Self> {
        let norm = match cfg.norm {
            NormKind::Instance => Some(GroupNorm::instance(&mut pb.child("norm"), cfg.channels)?),
            NormKind::None => None,
        };
        let conv = Conv2d::new(&mut pb.child("conv"), cfg.channels, cfg.channels, ConvGeometry::SAME_3X3)?;
        Ok(Self {
            norm,
            activation: cfg.activation,
            conv,
        })
    }

    pub fn conv(&self) -> &Conv2d {
        &self.conv
    }
}

impl<T: Float> Layer<T> for ConvUnit {
    type Cache = ConvUnitCache<T>;

    fn forward(&self, ps: &ParamStore<T>, x: &Array4<T>) -> Result<Array4<T>> {
        let n = match &self.norm {
            Some(norm) => norm.forward(ps, x)?,
            None => x.clone(),
        };
        self.conv.forward(ps, &self.activation.forward(&n))
    }

    fn forward_train(&self, ps: &ParamStore<T>, x: &Array4<T>) -> Result<(Array4<T>, ConvUnitCache<T>)> {
        let (n, norm) = match &self.norm {
            Some(layer) => {
                let (n, c) = layer.forward_train(ps, x)?;
                (n, Some(c))
            }
            None => (x.clone(), None),
        };
        let y = self.conv.forward(ps, &self.activation.forward(&n))?;
        Ok((
            y,
            ConvUnitCache {
                norm,
                pre_activation: n,
            },
        ))
    }

    fn backward(&self, ps: &ParamStore<T>, cache: ConvUnitCache<T>, dy: &Array4<T>, grads: &mut Grads<T>) -> Array4<T> {
        let a = self.activation.forward(&cache.pre_activation);
        let da = self.conv.backward_from_input(ps, &a, dy, grads);
        drop(a);
        let dn = self.activation.backward(&cache.pre_activation, &da);
        match (&self.norm, cache.norm) {
            (Some(layer), Some(c)) => layer.backward(ps, c, &dn, grads),
            _ => dn,
        }
    }
}

/// Time-frequency convolutions: three shape-preserving conv sub-blocks.
#[derive(Clone, Debug)]
pub struct Tfc {
    units: Vec<ConvUnit>,
}

impl Tfc {
    pub fn new<T: Float>(pb: &mut ParamBuilder<'_, T>, cfg: &BlockConfig) -> Result<Self> {
        let units = (0..TFC_CONVS)
            .map(|i| ConvUnit::new(&mut pb.child(&i.to_string()), cfg))
            .collect::<Result<_>>()?;
        Ok(Self { units })
    }

    pub fn units(&self) -> &[ConvUnit] {
        &self.units
    }
}

impl<T: Float> Layer<T> for Tfc {
    type Cache = Vec<ConvUnitCache<T>>;

    fn forward(&self, ps: &ParamStore<T>, x: &Array4<T>) -> Result<Array4<T>> {
        let mut y = self.units[0].forward(ps, x)?;
        for u in &self.units[1..] {
            y = u.forward(ps, &y)?;
        }
        Ok(y)
    }

    fn forward_train(&self, ps: &ParamStore<T>, x: &Array4<T>) -> Result<(Array4<T>, Self::Cache)> {
        let mut caches = Vec::with_capacity(self.units.len());
        let (mut y, c) = self.units[0].forward_train(ps, x)?;
        caches.push(c);
        for u in &self.units[1..] {
            let (next, c) = u.forward_train(ps, &y)?;
            caches.push(c);
            y = next;
        }
        Ok((y, caches))
    }

    fn backward(&self, ps: &ParamStore<T>, cache: Self::Cache, dy: &Array4<T>, grads: &mut Grads<T>) -> Array4<T> {
        let mut d = dy.clone();
        for (u, c) in self.units.iter().zip(cache).rev() {
            d = u.backward(ps, c, &d, grads);
        }
        d
    }
}

/// `[B, C, F, T]` → `[F, B·C·T]`: every (batch, channel, frame) fiber becomes a column.
fn to_wide<T: Float>(x: &Array4<T>) -> Array2<T> {
    let (b, c, f, t) = x.dim();
    x.view()
        .permuted_axes([2, 0, 1, 3])
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((f, b * c * t))
        .expect("standard layout")
}

fn from_wide<T: Float>(y: Array2<T>, dims: (usize, usize, usize, usize)) -> Array4<T> {
    let (b, c, f, t) = dims;
    y.into_shape_with_order((f, b, c, t))
        .expect("column count matches")
        .permuted_axes([1, 2, 0, 3])
        .as_standard_layout()
        .into_owned()
}

fn add_column<T: Float>(m: &mut Array2<T>, v: ndarray::ArrayView1<'_, T>) {
    for (mut row, &b) in m.axis_iter_mut(Axis(0)).zip(v.iter()) {
        row.mapv_inplace(|x| x + b);
    }
}

/// Time-distributed fully-connected bottleneck along frequency:
/// `out = x + expand(act(reduce(x)))`, weights shared over batch, channels
/// and frames.
#[derive(Clone, Debug)]
pub struct Tdf {
    reduce_w: ParamId,
    reduce_b: ParamId,
    expand_w: ParamId,
    expand_b: ParamId,
    freq: usize,
    bottleneck: usize,
    activation: Activation,
}

pub struct TdfCache<T> {
    wide_input: Array2<T>,
    hidden_pre: Array2<T>,
}

impl Tdf {
    pub fn new<T: Float>(pb: &mut ParamBuilder<'_, T>, freq: usize, bottleneck_factor: usize, activation: Activation) -> Result<Self> {
        if bottleneck_factor == 0 || freq % bottleneck_factor != 0 {
            return Err(Error::config(format!(
                "bottleneck factor {bottleneck_factor} does not divide {freq} frequency bins"
            )));
        }
        let hidden = freq / bottleneck_factor;
        Ok(Self {
            reduce_w: pb.kaiming_uniform("reduce.weight", &[hidden, freq], freq)?,
            reduce_b: pb.zeros("reduce.bias", &[hidden])?,
            expand_w: pb.kaiming_uniform("expand.weight", &[freq, hidden], hidden)?,
            expand_b: pb.zeros("expand.bias", &[freq])?,
            freq,
            bottleneck: hidden,
            activation,
        })
    }

    pub fn bottleneck_width(&self) -> usize {
        self.bottleneck
    }

    pub fn param_ids(&self) -> [ParamId; 4] {
        [self.reduce_w, self.reduce_b, self.expand_w, self.expand_b]
    }

    fn check<T: Float>(&self, x: &Array4<T>) -> Result<()> {
        if x.dim().2 != self.freq {
            return Err(Error::shape(format!(
                "TDF built for {} bins, got {}",
                self.freq,
                x.dim().2
            )));
        }
        Ok(())
    }

    fn branch<T: Float>(&self, ps: &ParamStore<T>, wide: &Array2<T>) -> (Array2<T>, Array2<T>) {
        let n = wide.ncols();
        let mut z = Array2::zeros((self.bottleneck, n));
        gemm(T::one(), ps.view2(self.reduce_w), wide.view(), T::zero(), z.view_mut());
        add_column(&mut z, ps.view1(self.reduce_b));
        let a = self.activation.forward(&z);
        let mut y = Array2::zeros((self.freq, n));
        gemm(T::one(), ps.view2(self.expand_w), a.view(), T::zero(), y.view_mut());
        add_column(&mut y, ps.view1(self.expand_b));
        (z, y)
    }
}

impl<T: Float> Layer<T> for Tdf {
    type Cache = TdfCache<T>;

    fn forward(&self, ps: &ParamStore<T>, x: &Array4<T>) -> Result<Array4<T>> {
        self.check(x)?;
        let (_, y) = self.branch(ps, &to_wide(x));
        Ok(x + &from_wide(y, x.dim()))
    }

    fn forward_train(&self, ps: &ParamStore<T>, x: &Array4<T>) -> Result<(Array4<T>, TdfCache<T>)> {
        self.check(x)?;
        let wide = to_wide(x);
        let (z, y) = self.branch(ps, &wide);
        Ok((
            x + &from_wide(y, x.dim()),
            TdfCache {
                wide_input: wide,
                hidden_pre: z,
            },
        ))
    }

    fn backward(&self, ps: &ParamStore<T>, cache: TdfCache<T>, dy: &Array4<T>, grads: &mut Grads<T>) -> Array4<T> {
        let TdfCache { wide_input, hidden_pre } = cache;
        let dyw = to_wide(dy);
        let a = self.activation.forward(&hidden_pre);
        gemm(T::one(), dyw.view(), a.t(), T::one(), grads.view2_mut(self.expand_w));
        grads.view1_mut(self.expand_b).zip_mut_with(&dyw.sum_axis(Axis(1)), |g, &v| *g += v);
        drop(a);
        let mut da = Array2::zeros(hidden_pre.raw_dim());
        gemm(T::one(), ps.view2(self.expand_w).t(), dyw.view(), T::zero(), da.view_mut());
        let dz = self.activation.backward(&hidden_pre, &da);
        gemm(T::one(), dz.view(), wide_input.t(), T::one(), grads.view2_mut(self.reduce_w));
        let dzb: Array1<T> = dz.sum_axis(Axis(1));
        grads.view1_mut(self.reduce_b).zip_mut_with(&dzb, |g, &v| *g += v);
        let mut dxw = Array2::zeros(wide_input.raw_dim());
        gemm(T::one(), ps.view2(self.reduce_w).t(), dz.view(), T::zero(), dxw.view_mut());
        dy + &from_wide(dxw, dy.dim())
    }
}

/// TFC-TDF v3 residual block:
/// `y1 = TFC(x); y2 = TDF(y1); y3 = TFC(y2); out = y3 + Conv1x1(x)`.
#[derive(Clone, Debug)]
pub struct TfcTdf {
    tfc1: Tfc,
    tdf: Tdf,
    tfc2: Tfc,
    residual: Conv2d,
    channels: usize,
}

pub struct TfcTdfCache<T> {
    input: Array4<T>,
    tfc1: Vec<ConvUnitCache<T>>,
    tdf: TdfCache<T>,
    tfc2: Vec<ConvUnitCache<T>>,
}

impl TfcTdf {
    pub fn new<T: Float>(pb: &mut ParamBuilder<'_, T>, cfg: &BlockConfig) -> Result<Self> {
        Ok(Self {
            tfc1: Tfc::new(&mut pb.child("tfc1"), cfg)?,
            tdf: Tdf::new(&mut pb.child("tdf"), cfg.freq, cfg.bottleneck_factor, cfg.activation)?,
            tfc2: Tfc::new(&mut pb.child("tfc2"), cfg)?,
            residual: Conv2d::identity(&mut pb.child("residual"), cfg.channels)?,
            channels: cfg.channels,
        })
    }

    pub fn tfc1(&self) -> &Tfc {
        &self.tfc1
    }

    pub fn tdf(&self) -> &Tdf {
        &self.tdf
    }

    pub fn tfc2(&self) -> &Tfc {
        &self.tfc2
    }

    pub fn residual(&self) -> &Conv2d {
        &self.residual
    }

    fn check<T: Float>(&self, x: &Array4<T>) -> Result<()> {
        if x.dim().1 != self.channels {
            return Err(Error::shape(format!(
                "TFC-TDF block expects {} channels, got {}",
                self.channels,
                x.dim().1
            )));
        }
        Ok(())
    }
}

impl<T: Float> Layer<T> for TfcTdf {
    type Cache = TfcTdfCache<T>;

    fn forward(&self, ps: &ParamStore<T>, x: &Array4<T>) -> Result<Array4<T>> {
        self.check(x)?;
        let y1 = self.tfc1.forward(ps, x)?;
        let y2 = self.tdf.forward(ps, &y1)?;
        drop(y1);
        let mut y3 = self.tfc2.forward(ps, &y2)?;
        drop(y2);
        y3 += &self.residual.forward(ps, x)?;
        Ok(y3)
    }

    fn forward_train(&self, ps: &ParamStore<T>, x: &Array4<T>) -> Result<(Array4<T>, TfcTdfCache<T>)> {
        self.check(x)?;
        let (y1, tfc1) = self.tfc1.forward_train(ps, x)?;
        let (y2, tdf) = self.tdf.forward_train(ps, &y1)?;
        drop(y1);
        let (mut y3, tfc2) = self.tfc2.forward_train(ps, &y2)?;
        y3 += &self.residual.forward(ps, x)?;
        Ok((
            y3,
            TfcTdfCache {
                input: x.clone(),
                tfc1,
                tdf,
                tfc2,
            },
        ))
    }

    fn backward(&self, ps: &ParamStore<T>, cache: TfcTdfCache<T>, dy: &Array4<T>, grads: &mut Grads<T>) -> Array4<T> {
        let mut dx = self.residual.backward_from_input(ps, &cache.input, dy, grads);
        let dy2 = self.tfc2.backward(ps, cache.tfc2, dy, grads);
        let dy1 = self.tdf.backward(ps, cache.tdf, &dy2, grads);
        drop(dy2);
        dx += &self.tfc1.backward(ps, cache.tfc1, &dy1, grads);
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::check_layer;
    use crate::seed;

    fn cfg(norm: NormKind) -> BlockConfig {
        BlockConfig {
            channels: 4,
            freq: 8,
            bottleneck_factor: 2,
            activation: Activation::Gelu,
            norm,
        }
    }

    fn input() -> Array4<f64> {
        Array4::from_shape_fn((2, 4, 8, 5), |(b, c, f, t)| ((b * 37 + c * 11 + f * 5 + t * 3) % 17) as f64 / 8.0 - 1.0)
    }

    #[test]
    fn zeroed_block_is_identity() {
        let mut ps = ParamStore::<f64>::new();
        let mut rng = seed::rng(3, &[]);
        let block = TfcTdf::new(&mut ParamBuilder::new(&mut ps, &mut rng), &cfg(NormKind::Instance)).unwrap();
        let keep = [block.residual().weight()];
        for id in ps.ids().collect::<Vec<_>>() {
            if !keep.contains(&id) {
                ps.get_mut(id).fill(0.0);
            }
        }
        let x = input();
        assert_eq!(block.forward(&ps, &x).unwrap(), x);
    }

    #[test]
    fn tdf_mixes_only_frequency() {
        let mut ps = ParamStore::<f64>::new();
        let mut rng = seed::rng(4, &[]);
        let tdf = Tdf::new(&mut ParamBuilder::new(&mut ps, &mut rng), 8, 4, Activation::Gelu).unwrap();
        let x = input();
        let y = tdf.forward(&ps, &x).unwrap();
        let mut x2 = x.clone();
        x2[[1, 2, 3, 4]] += 1.0;
        let y2 = tdf.forward(&ps, &x2).unwrap();
        for ((idx, a), b) in y.indexed_iter().zip(y2.iter()) {
            if (idx.0, idx.1, idx.3) != (1, 2, 4) {
                assert_eq!(*a, *b);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for norm in [NormKind::Instance, NormKind::None] {
            let mut ps = ParamStore::<f64>::new();
            let mut rng = seed::rng(5, &[]);
            let block = TfcTdf::new(&mut ParamBuilder::new(&mut ps, &mut rng), &cfg(norm)).unwrap();
            let report = check_layer(&block, &mut ps, &input(), 12, &mut rng).unwrap();
            assert!(report.max_rel_err < 1e-4, "{norm:?}: {report:?}");
        }
    }

    #[test]
    fn channel_mismatch_is_a_shape_error() {
        let mut ps = ParamStore::<f32>::new();
        let mut rng = seed::rng(3, &[]);
        let block = TfcTdf::new(&mut ParamBuilder::new(&mut ps, &mut rng), &cfg(NormKind::Instance)).unwrap();
        assert!(matches!(block.forward(&ps, &Array4::zeros((1, 3, 8, 4))), Err(Error::Shape(_))));
    }
}
