//! Matrix helpers on top of ndarray's GEMM.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView2, ArrayViewMut2, Axis};
use rayon::prelude::*;

use crate::float::Float;

/// Below this many multiply-adds a product runs on the calling thread.
const PAR_MIN_WORK: usize = 1 << 22;
const PAR_MIN_COLS: usize = 256;

/// `c = alpha·a·b + beta·c`, splitting the columns of `c` across the rayon
/// pool for large products. Each output column is produced by exactly one
/// GEMM call, so the result does not depend on the split.
pub fn gemm<T: Float>(alpha: T, a: ArrayView2<'_, T>, b: ArrayView2<'_, T>, beta: T, mut c: ArrayViewMut2<'_, T>) {
    let (m, k) = a.dim();
    let n = b.ncols();
    let threads = rayon::current_num_threads();
    if threads <= 1 || m * n * k < PAR_MIN_WORK || n < 2 * PAR_MIN_COLS {
        general_mat_mul(alpha, &a, &b, beta, &mut c);
        return;
    }
    let chunk = n.div_ceil(threads).max(PAR_MIN_COLS);
    c.axis_chunks_iter_mut(Axis(1), chunk)
        .into_par_iter()
        .enumerate()
        .for_each(|(i, mut cc)| {
            let cols = cc.ncols();
            let bb = b.slice(s![.., i * chunk..i * chunk + cols]);
            general_mat_mul(alpha, &a, &bb, beta, &mut cc);
        });
}

pub fn matmul<T: Float>(a: ArrayView2<'_, T>, b: ArrayView2<'_, T>) -> Array2<T> {
    let mut c = Array2::zeros((a.nrows(), b.ncols()));
    gemm(T::one(), a, b, T::zero(), c.view_mut());
    c
}
