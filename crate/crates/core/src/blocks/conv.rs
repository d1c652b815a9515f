//! 2D convolution and transposed convolution over `[B × C × F × T]`.
//!
//! Both run through im2col tiles and one GEMM per tile. A tile covers a band
//! of output rows (frequency) so the column buffer stays small even for the
//! 2048 × 256 full-resolution maps. The transposed convolution is the exact
//! adjoint of the strided convolution with the same kernel, which is how the
//! up-sampling block is defined.

use ndarray::{s, Array2, Array3, Array4, ArrayView2, ArrayView3, ArrayView4, Axis};
use rayon::prelude::*;

use super::Layer;
use crate::error::{Error, Result};
use crate::float::Float;
use crate::linalg::gemm;
use crate::params::{Grads, ParamBuilder, ParamId, ParamStore};

/// Column-buffer budget per tile, in elements.
const TILE_ELEMS: usize = 1 << 18;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub const POINTWISE: Self = Self {
        kernel: 1,
        stride: 1,
        padding: 0,
    };
    pub const SAME_3X3: Self = Self {
        kernel: 3,
        stride: 1,
        padding: 1,
    };
    pub const DOWN_3X3: Self = Self {
        kernel: 3,
        stride: 2,
        padding: 1,
    };

    pub fn output_len(&self, n: usize) -> Option<usize> {
        let padded = n + 2 * self.padding;
        (padded >= self.kernel).then(|| (padded - self.kernel) / self.stride + 1)
    }

    fn is_pointwise(&self) -> bool {
        *self == Self::POINTWISE
    }

    fn rows_per_tile(&self, channels: usize, out_w: usize) -> usize {
        (TILE_ELEMS / (channels * self.kernel * self.kernel * out_w).max(1)).max(1)
    }

    /// Input rows touched by output rows `r0..r1`, clipped to `0..h`.
    fn input_rows(&self, r0: usize, r1: usize, h: usize) -> (usize, usize) {
        let lo = (r0 * self.stride).saturating_sub(self.padding);
        let hi = ((r1 - 1) * self.stride + self.kernel).saturating_sub(self.padding).min(h);
        (lo, hi)
    }
}

fn im2col<T: Float>(x: ArrayView3<'_, T>, g: ConvGeometry, r0: usize, r1: usize, out_w: usize) -> Array2<T> {
    let (ci, h, w) = x.dim();
    let k = g.kernel;
    let pad = g.padding as isize;
    let xs = x.as_slice().expect("standard layout");
    let mut cols = Array2::<T>::zeros((ci * k * k, (r1 - r0) * out_w));
    for (row, mut dst) in cols.axis_iter_mut(Axis(0)).enumerate() {
        let (c, ky, kx) = (row / (k * k), (row / k) % k, row % k);
        let dst = dst.as_slice_mut().expect("contiguous row");
        for r in r0..r1 {
            let iy = (r * g.stride + ky) as isize - pad;
            if iy < 0 || iy >= h as isize {
                continue;
            }
            let src = &xs[(c * h + iy as usize) * w..][..w];
            let d = &mut dst[(r - r0) * out_w..][..out_w];
            if g.stride == 1 {
                let shift = kx as isize - pad;
                let lo = (-shift).max(0) as usize;
                let hi = ((w as isize - shift).min(out_w as isize)).max(0) as usize;
                if lo < hi {
                    let s0 = (lo as isize + shift) as usize;
                    d[lo..hi].copy_from_slice(&src[s0..s0 + (hi - lo)]);
                }
            } else {
                for (t, v) in d.iter_mut().enumerate() {
                    let ix = (t * g.stride + kx) as isize - pad;
                    if ix >= 0 && ix < w as isize {
                        *v = src[ix as usize];
                    }
                }
            }
        }
    }
    cols
}

/// Scatter-add a column buffer back into an input slab covering rows `y0..`.
fn col2im_add<T: Float>(cols: ArrayView2<'_, T>, g: ConvGeometry, r0: usize, r1: usize, out_w: usize, slab: &mut Array3<T>, y0: usize, h: usize) {
    let (_, rows, w) = slab.dim();
    let k = g.kernel;
    let pad = g.padding as isize;
    for (row, src) in cols.axis_iter(Axis(0)).enumerate() {
        let (c, ky, kx) = (row / (k * k), (row / k) % k, row % k);
        for r in r0..r1 {
            let iy = (r * g.stride + ky) as isize - pad;
            if iy < 0 || iy >= h as isize {
                continue;
            }
            let local = iy as usize - y0;
            debug_assert!(local < rows);
            let mut dst = slab.slice_mut(s![c, local, ..]);
            let base = (r - r0) * out_w;
            for t in 0..out_w {
                let ix = (t * g.stride + kx) as isize - pad;
                if ix >= 0 && ix < w as isize {
                    dst[ix as usize] += src[base + t];
                }
            }
        }
    }
}

fn weight_matrix<T: Float>(w: ArrayView4<'_, T>) -> ArrayView2<'_, T> {
    let (co, ci, kh, kw) = w.dim();
    w
        .into_shape_with_order((co, ci * kh * kw))
        .expect("weights are stored in standard layout")
}

/// Plain convolution, no bias. `w` is `[out, in, k, k]`.
pub fn conv2d<T: Float>(x: ArrayView4<'_, T>, w: ArrayView4<'_, T>, g: ConvGeometry) -> Result<Array4<T>> {
    let (b, ci, h, wd) = x.dim();
    let (co, wci, kh, kw) = w.dim();
    if wci != ci || kh != g.kernel || kw != g.kernel {
        return Err(Error::shape(format!(
            "conv expects {wci} input channels with {kh}x{kw} kernel, got input {:?}",
            x.dim()
        )));
    }
    let (ho, wo) = match (g.output_len(h), g.output_len(wd)) {
        (Some(a), Some(c)) => (a, c),
        _ => return Err(Error::shape(format!("input {h}x{wd} smaller than kernel"))),
    };
    let x = x.as_standard_layout();
    let w2 = weight_matrix(w.view());
    let mut y = Array4::<T>::zeros((b, co, ho, wo));
    for bi in 0..b {
        let xb = x.index_axis(Axis(0), bi);
        let yb = y.index_axis_mut(Axis(0), bi);
        let mut y2 = yb.into_shape_with_order((co, ho * wo)).expect("fresh array");
        if g.is_pointwise() {
            let x2 = xb.into_shape_with_order((ci, h * wd)).expect("standard layout");
            gemm(T::one(), w2, x2, T::zero(), y2.view_mut());
            continue;
        }
        let rows = g.rows_per_tile(ci, wo);
        y2.axis_chunks_iter_mut(Axis(1), rows * wo)
            .into_par_iter()
            .enumerate()
            .for_each(|(i, mut yt)| {
                let r0 = i * rows;
                let r1 = (r0 + rows).min(ho);
                let cols = im2col(xb, g, r0, r1, wo);
                ndarray::linalg::general_mat_mul(T::one(), &w2, &cols, T::zero(), &mut yt);
            });
    }
    Ok(y)
}

/// Gradient of [`conv2d`] with respect to its input; also the forward pass of
/// the transposed convolution. `in_hw` is the spatial size of the result.
pub fn conv2d_input_grad<T: Float>(dy: ArrayView4<'_, T>, w: ArrayView4<'_, T>, g: ConvGeometry, in_hw: (usize, usize)) -> Result<Array4<T>> {
    let (b, co, ho, wo) = dy.dim();
    let (wco, ci, _, _) = w.dim();
    let (h, wd) = in_hw;
    if wco != co || g.output_len(h) != Some(ho) || g.output_len(wd) != Some(wo) {
        return Err(Error::shape(format!(
            "transposed conv: {:?} is not the image of a {h}x{wd} input under this geometry",
            dy.dim()
        )));
    }
    let dy = dy.as_standard_layout();
    let w2 = weight_matrix(w.view());
    let w2t = w2.t();
    let mut dx = Array4::<T>::zeros((b, ci, h, wd));
    for bi in 0..b {
        let dyb = dy.index_axis(Axis(0), bi);
        let dy2 = dyb.into_shape_with_order((co, ho * wo)).expect("standard layout");
        let mut dxb = dx.index_axis_mut(Axis(0), bi);
        if g.is_pointwise() {
            let dx2 = dxb.into_shape_with_order((ci, h * wd)).expect("fresh array");
            gemm(T::one(), w2t, dy2, T::zero(), dx2);
            continue;
        }
        let rows = g.rows_per_tile(ci, wo);
        let tiles: Vec<(usize, usize)> = (0..ho).step_by(rows).map(|r0| (r0, (r0 + rows).min(ho))).collect();
        let slabs: Vec<(usize, Array3<T>)> = tiles
            .par_iter()
            .map(|&(r0, r1)| {
                let dyt = dy2.slice(s![.., r0 * wo..r1 * wo]);
                let mut dcols = Array2::<T>::zeros((w2t.nrows(), dyt.ncols()));
                ndarray::linalg::general_mat_mul(T::one(), &w2t, &dyt, T::zero(), &mut dcols);
                let (y0, y1) = g.input_rows(r0, r1, h);
                let mut slab = Array3::<T>::zeros((ci, y1 - y0, wd));
                col2im_add(dcols.view(), g, r0, r1, wo, &mut slab, y0, h);
                (y0, slab)
            })
            .collect();
        for (y0, slab) in slabs {
            let rows = slab.dim().1;
            let mut dst = dxb.slice_mut(s![.., y0..y0 + rows, ..]);
            dst += &slab;
        }
    }
    Ok(dx)
}

/// Gradient of [`conv2d`] with respect to its kernel, `[out, in, k, k]`.
pub fn conv2d_weight_grad<T: Float>(x: ArrayView4<'_, T>, dy: ArrayView4<'_, T>, g: ConvGeometry) -> Array4<T> {
    let (b, ci, h, wd) = x.dim();
    let (_, co, ho, wo) = dy.dim();
    let k = g.kernel;
    let x = x.as_standard_layout();
    let dy = dy.as_standard_layout();
    let mut dw = Array2::<T>::zeros((co, ci * k * k));
    for bi in 0..b {
        let xb = x.index_axis(Axis(0), bi);
        let dyb = dy.index_axis(Axis(0), bi);
        let dy2 = dyb.into_shape_with_order((co, ho * wo)).expect("standard layout");
        if g.is_pointwise() {
            let x2 = xb.into_shape_with_order((ci, h * wd)).expect("standard layout");
            gemm(T::one(), dy2, x2.t(), T::one(), dw.view_mut());
            continue;
        }
        let rows = g.rows_per_tile(ci, wo);
        let tiles: Vec<(usize, usize)> = (0..ho).step_by(rows).map(|r0| (r0, (r0 + rows).min(ho))).collect();
        let partials: Vec<Array2<T>> = tiles
            .par_iter()
            .map(|&(r0, r1)| {
                let cols = im2col(xb, g, r0, r1, wo);
                let dyt = dy2.slice(s![.., r0 * wo..r1 * wo]);
                let mut part = Array2::<T>::zeros((co, ci * k * k));
                ndarray::linalg::general_mat_mul(T::one(), &dyt, &cols.t(), T::zero(), &mut part);
                part
            })
            .collect();
        for part in partials {
            dw += &part;
        }
    }
    dw.into_shape_with_order((co, ci, k, k)).expect("fresh array")
}

fn add_bias<T: Float>(y: &mut Array4<T>, bias: ndarray::ArrayView1<'_, T>) {
    for (mut yc, &b) in y.axis_iter_mut(Axis(1)).zip(bias.iter()) {
        yc.mapv_inplace(|v| v + b);
    }
}

fn bias_grad<T: Float>(dy: &Array4<T>) -> ndarray::Array1<T> {
    dy.sum_axis(Axis(3)).sum_axis(Axis(2)).sum_axis(Axis(0))
}

/// Convolution layer with bias; weight `[out, in, k, k]`.
#[derive(Clone, Debug)]
pub struct Conv2d {
    weight: ParamId,
    bias: ParamId,
    in_channels: usize,
    out_channels: usize,
    geometry: ConvGeometry,
}

impl Conv2d {
    pub fn new<T: Float>(pb: &mut ParamBuilder<'_, T>, in_channels: usize, out_channels: usize, geometry: ConvGeometry) -> Result<Self> {
        let k = geometry.kernel;
        let fan_in = in_channels * k * k;
        let weight = pb.kaiming_uniform("weight", &[out_channels, in_channels, k, k], fan_in)?;
        let bias = pb.zeros("bias", &[out_channels])?;
        Ok(Self {
            weight,
            bias,
            in_channels,
            out_channels,
            geometry,
        })
    }

    /// 1×1 convolution initialized to the identity map.
    pub fn identity<T: Float>(pb: &mut ParamBuilder<'_, T>, channels: usize) -> Result<Self> {
        let eye = Array4::from_shape_fn((channels, channels, 1, 1), |(o, i, _, _)| if o == i { T::one() } else { T::zero() });
        let weight = pb.add("weight", eye.into_dyn())?;
        let bias = pb.zeros("bias", &[channels])?;
        Ok(Self {
            weight,
            bias,
            in_channels: channels,
            out_channels: channels,
            geometry: ConvGeometry::POINTWISE,
        })
    }

    pub fn weight(&self) -> ParamId {
        self.weight
    }

    pub fn bias(&self) -> ParamId {
        self.bias
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn geometry(&self) -> ConvGeometry {
        self.geometry
    }

    fn check<T: Float>(&self, x: &Array4<T>) -> Result<()> {
        if x.dim().1 != self.in_channels {
            return Err(Error::shape(format!(
                "conv expects {} channels, got {}",
                self.in_channels,
                x.dim().1
            )));
        }
        Ok(())
    }

    /// Backward pass given the layer input; accumulates into `grads`.
    pub fn backward_from_input<T: Float>(&self, ps: &ParamStore<T>, x: &Array4<T>, dy: &Array4<T>, grads: &mut Grads<T>) -> Array4<T> {
        let w = ps.view4(self.weight);
        let dw = conv2d_weight_grad(x.view(), dy.view(), self.geometry);
        grads.view4_mut(self.weight).zip_mut_with(&dw, |g, &v| *g += v);
        grads.view1_mut(self.bias).zip_mut_with(&bias_grad(dy), |g, &v| *g += v);
        let (_, _, h, wd) = x.dim();
        conv2d_input_grad(dy.view(), w, self.geometry, (h, wd)).expect("shapes fixed by forward")
    }
}

impl<T: Float> Layer<T> for Conv2d {
    type Cache = Array4<T>;

    fn forward(&self, ps: &ParamStore<T>, x: &Array4<T>) -> Result<Array4<T>> {
        self.check(x)?;
        let mut y = conv2d(x.view(), ps.view4(self.weight), self.geometry)?;
        add_bias(&mut y, ps.view1(self.bias));
        Ok(y)
    }

    fn forward_train(&self, ps: &ParamStore<T>, x: &Array4<T>) -> Result<(Array4<T>, Array4<T>)> {
        let y = self.forward(ps, x)?;
        Ok((y, x.clone()))
    }

    fn backward(&self, ps: &ParamStore<T>, x: Array4<T>, dy: &Array4<T>, grads: &mut Grads<T>) -> Array4<T> {
        self.backward_from_input(ps, &x, dy, grads)
    }
}

/// Transposed convolution mapping `[B × in × F × T]` to
/// `[B × out × stride·F × stride·T]`; weight `[in, out, k, k]`.
///
/// With the same weight array it is the adjoint of the strided [`conv2d`]
/// from `out` to `in` channels.
#[derive(Clone, Debug)]
pub struct ConvTranspose2d {
    weight: ParamId,
    bias: ParamId,
    in_channels: usize,
    out_channels: usize,
    geometry: ConvGeometry,
}

impl ConvTranspose2d {
    pub fn new<T: Float>(pb: &mut ParamBuilder<'_, T>, in_channels: usize, out_channels: usize, geometry: ConvGeometry) -> Result<Self> {
        let k = geometry.kernel;
        // Every output position receives about in·k²/stride² taps.
        let fan_in = (in_channels * k * k / (geometry.stride * geometry.stride)).max(1);
        let weight = pb.kaiming_uniform("weight", &[in_channels, out_channels, k, k], fan_in)?;
        let bias = pb.zeros("bias", &[out_channels])?;
        Ok(Self {
            weight,
            bias,
            in_channels,
            out_channels,
            geometry,
        })
    }

    pub fn weight(&self) -> ParamId {
        self.weight
    }

    pub fn bias(&self) -> ParamId {
        self.bias
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (h * self.geometry.stride, w * self.geometry.stride)
    }
}

impl<T: Float> Layer<T> for ConvTranspose2d {
    type Cache = Array4<T>;

    fn forward(&self, ps: &ParamStore<T>, x: &Array4<T>) -> Result<Array4<T>> {
        let (_, c, h, w) = x.dim();
        if c != self.in_channels {
            return Err(Error::shape(format!(
                "transposed conv expects {} channels, got {c}",
                self.in_channels
            )));
        }
        let mut y = conv2d_input_grad(x.view(), ps.view4(self.weight), self.geometry, self.out_hw(h, w))?;
        add_bias(&mut y, ps.view1(self.bias));
        Ok(y)
    }

    fn forward_train(&self, ps: &ParamStore<T>, x: &Array4<T>) -> Result<(Array4<T>, Array4<T>)> {
        let y = self.forward(ps, x)?;
        Ok((y, x.clone()))
    }

    fn backward(&self, ps: &ParamStore<T>, x: Array4<T>, dy: &Array4<T>, grads: &mut Grads<T>) -> Array4<T> {
        grads.view1_mut(self.bias).zip_mut_with(&bias_grad(dy), |g, &v| *g += v);
        let dw = conv2d_weight_grad(dy.view(), x.view(), self.geometry);
        grads.view4_mut(self.weight).zip_mut_with(&dw, |g, &v| *g += v);
        conv2d(dy.view(), ps.view4(self.weight), self.geometry).expect("shapes fixed by forward")
    }
}
