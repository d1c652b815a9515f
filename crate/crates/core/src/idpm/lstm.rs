//! Bidirectional LSTM over `[steps, batch, features]` sequences, with
//! backpropagation through time.
//!
//! Gate order in the stacked weights is input, forget, cell, output.

use ndarray::{s, Array2, Array3, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::float::Float;
use crate::linalg::gemm;
use crate::params::{Grads, ParamBuilder, ParamId, ParamStore};

#[inline]
fn sigmoid<T: Float>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

fn flatten<T: Float>(x: &Array3<T>) -> ArrayView2<'_, T> {
    let (s, n, c) = x.dim();
    x.view().into_shape_with_order((s * n, c)).expect("standard layout")
}

/// One direction of an LSTM layer.
#[derive(Clone, Debug)]
pub struct LstmDirection {
    w_ih: ParamId,
    w_hh: ParamId,
    bias: ParamId,
    input: usize,
    hidden: usize,
    reverse: bool,
}

pub struct LstmCache<T> {
    /// Activated gates `[steps·batch, 4h]`.
    gates: Array2<T>,
    /// Cell states `[steps, batch, h]`, indexed by time.
    cells: Array3<T>,
    /// Hidden outputs `[steps, batch, h]`, indexed by time.
    hidden: Array3<T>,
}

impl LstmDirection {
    pub fn new<T: Float>(pb: &mut ParamBuilder<'_, T>, input: usize, hidden: usize, reverse: bool) -> Result<Self> {
        let w_ih = pb.orthogonal_blocks("w_ih", 4, hidden, input)?;
        let w_hh = pb.orthogonal_blocks("w_hh", 4, hidden, hidden)?;
        let bias = pb.zeros("bias", &[4 * hidden])?;
        Ok(Self {
            w_ih,
            w_hh,
            bias,
            input,
            hidden,
            reverse,
        })
    }

    pub fn param_ids(&self) -> [ParamId; 3] {
        [self.w_ih, self.w_hh, self.bias]
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    /// Multiply-adds for one pass over `steps × batch`.
    pub fn macs(&self, steps: usize, batch: usize) -> usize {
        steps * batch * 4 * self.hidden * (self.input + self.hidden)
    }

    fn time_order(&self, steps: usize) -> Vec<usize> {
        if self.reverse {
            (0..steps).rev().collect()
        } else {
            (0..steps).collect()
        }
    }

    /// Returns hidden states `[steps, batch, h]` and the cache for BPTT.
    pub fn run<T: Float>(&self, ps: &ParamStore<T>, x: &Array3<T>) -> (Array3<T>, LstmCache<T>) {
        let (steps, batch, _) = x.dim();
        let h = self.hidden;
        let mut gates = Array2::<T>::zeros((steps * batch, 4 * h));
        gemm(T::one(), flatten(x), ps.view2(self.w_ih).t(), T::zero(), gates.view_mut());
        let bias = ps.view1(self.bias);
        for mut row in gates.outer_iter_mut() {
            row += &bias;
        }
        let w_hh = ps.view2(self.w_hh);
        let mut cells = Array3::<T>::zeros((steps, batch, h));
        let mut hidden = Array3::<T>::zeros((steps, batch, h));
        let mut prev: Option<usize> = None;
        for t in self.time_order(steps) {
            let mut g = gates.slice_mut(s![t * batch..(t + 1) * batch, ..]);
            if let Some(p) = prev {
                gemm(T::one(), hidden.index_axis(Axis(0), p), w_hh.t(), T::one(), g.view_mut());
            }
            for n in 0..batch {
                let mut row = g.row_mut(n);
                let row = row.as_slice_mut().expect("contiguous gate row");
                for j in 0..h {
                    let i = sigmoid(row[j]);
                    let f = sigmoid(row[h + j]);
                    let c_in = row[2 * h + j].tanh();
                    let o = sigmoid(row[3 * h + j]);
                    row[j] = i;
                    row[h + j] = f;
                    row[2 * h + j] = c_in;
                    row[3 * h + j] = o;
                    let c_prev = prev.map_or(T::zero(), |p| cells[[p, n, j]]);
                    let c = f * c_prev + i * c_in;
                    cells[[t, n, j]] = c;
                    hidden[[t, n, j]] = o * c.tanh();
                }
            }
            prev = Some(t);
        }
        let out = hidden.clone();
        (out, LstmCache { gates, cells, hidden })
    }

    /// Backpropagates `dh` (`[steps, batch, h]`) and returns the input gradient.
    pub fn backward<T: Float>(&self, ps: &ParamStore<T>, x: &Array3<T>, cache: LstmCache<T>, dh: &Array3<T>, grads: &mut Grads<T>) -> Array3<T> {
        let (steps, batch, _) = x.dim();
        let h = self.hidden;
        let LstmCache { gates, cells, hidden } = cache;
        let w_hh = ps.view2(self.w_hh);
        let mut dgates = Array2::<T>::zeros((steps * batch, 4 * h));
        let mut dh_next = Array2::<T>::zeros((batch, h));
        let mut dc_next = Array2::<T>::zeros((batch, h));
        let order = self.time_order(steps);
        for (k, &t) in order.iter().enumerate().rev() {
            let prev = if k > 0 { Some(order[k - 1]) } else { None };
            let g = gates.slice(s![t * batch..(t + 1) * batch, ..]);
            {
                let mut dg = dgates.slice_mut(s![t * batch..(t + 1) * batch, ..]);
                for n in 0..batch {
                    for j in 0..h {
                        let (i, f, c_in, o) = (g[[n, j]], g[[n, h + j]], g[[n, 2 * h + j]], g[[n, 3 * h + j]]);
                        let c = cells[[t, n, j]];
                        let tc = c.tanh();
                        let dhv = dh[[t, n, j]] + dh_next[[n, j]];
                        let dc = dc_next[[n, j]] + dhv * o * (T::one() - tc * tc);
                        let c_prev = prev.map_or(T::zero(), |p| cells[[p, n, j]]);
                        dg[[n, j]] = dc * c_in * i * (T::one() - i);
                        dg[[n, h + j]] = dc * c_prev * f * (T::one() - f);
                        dg[[n, 2 * h + j]] = dc * i * (T::one() - c_in * c_in);
                        dg[[n, 3 * h + j]] = dhv * tc * o * (T::one() - o);
                        dc_next[[n, j]] = dc * f;
                    }
                }
            }
            let dg = dgates.slice(s![t * batch..(t + 1) * batch, ..]);
            match prev {
                Some(p) => {
                    gemm(T::one(), dg, w_hh, T::zero(), dh_next.view_mut());
                    gemm(T::one(), dg.t(), hidden.index_axis(Axis(0), p), T::one(), grads.view2_mut(self.w_hh));
                }
                None => dh_next.fill(T::zero()),
            }
        }
        gemm(T::one(), dgates.t(), flatten(x), T::one(), grads.view2_mut(self.w_ih));
        grads
            .view1_mut(self.bias)
            .zip_mut_with(&dgates.sum_axis(Axis(0)), |g, &v| *g += v);
        let mut dx = Array3::<T>::zeros((steps, batch, self.input));
        {
            let mut flat = dx.view_mut().into_shape_with_order((steps * batch, self.input)).expect("standard layout");
            gemm(T::one(), dgates.view(), ps.view2(self.w_ih), T::zero(), flat.view_mut());
        }
        dx
    }
}

/// Forward and reverse LSTM with concatenated outputs `[steps, batch, 2h]`.
#[derive(Clone, Debug)]
pub struct BiLstm {
    forward: LstmDirection,
    backward: LstmDirection,
    input: usize,
    hidden: usize,
}

pub struct BiLstmCache<T> {
    input: Array3<T>,
    forward: LstmCache<T>,
    backward: LstmCache<T>,
}

impl BiLstm {
    pub fn new<T: Float>(pb: &mut ParamBuilder<'_, T>, input: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            forward: LstmDirection::new(&mut pb.child("fwd"), input, hidden, false)?,
            backward: LstmDirection::new(&mut pb.child("bwd"), input, hidden, true)?,
            input,
            hidden,
        })
    }

    pub fn output_width(&self) -> usize {
        2 * self.hidden
    }

    pub fn directions(&self) -> [&LstmDirection; 2] {
        [&self.forward, &self.backward]
    }

    pub fn macs(&self, steps: usize, batch: usize) -> usize {
        self.forward.macs(steps, batch) + self.backward.macs(steps, batch)
    }

    fn check<T: Float>(&self, x: &Array3<T>) -> Result<()> {
        if x.dim().2 != self.input {
            return Err(Error::shape(format!(
                "BLSTM expects {} features, got {}",
                self.input,
                x.dim().2
            )));
        }
        Ok(())
    }

    fn concat<T: Float>(&self, a: &Array3<T>, b: &Array3<T>) -> Array3<T> {
        let (s, n, h) = a.dim();
        let mut out = Array3::zeros((s, n, 2 * h));
        out.slice_mut(s![.., .., ..h]).assign(a);
        out.slice_mut(s![.., .., h..]).assign(b);
        out
    }

    pub fn forward<T: Float>(&self, ps: &ParamStore<T>, x: &Array3<T>) -> Result<Array3<T>> {
        self.check(x)?;
        let (a, _) = self.forward.run(ps, x);
        let (b, _) = self.backward.run(ps, x);
        Ok(self.concat(&a, &b))
    }

    pub fn forward_train<T: Float>(&self, ps: &ParamStore<T>, x: &Array3<T>) -> Result<(Array3<T>, BiLstmCache<T>)> {
        self.check(x)?;
        let (a, fc) = self.forward.run(ps, x);
        let (b, bc) = self.backward.run(ps, x);
        Ok((
            self.concat(&a, &b),
            BiLstmCache {
                input: x.clone(),
                forward: fc,
                backward: bc,
            },
        ))
    }

    pub fn backward<T: Float>(&self, ps: &ParamStore<T>, cache: BiLstmCache<T>, dy: &Array3<T>, grads: &mut Grads<T>) -> Array3<T> {
        let h = self.hidden;
        let dfwd = dy.slice(s![.., .., ..h]).to_owned();
        let dbwd = dy.slice(s![.., .., h..]).to_owned();
        let mut dx = self.forward.backward(ps, &cache.input, cache.forward, &dfwd, grads);
        dx += &self.backward.backward(ps, &cache.input, cache.backward, &dbwd, grads);
        dx
    }
}
