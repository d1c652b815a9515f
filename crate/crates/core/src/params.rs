//! Named parameter storage shared by every layer.
//!
//! Layers hold [`ParamId`] handles into a [`ParamStore`]; gradients live in a
//! [`Grads`] buffer with the same layout, which is what the optimizer and the
//! checkpoint writer iterate over.

use ndarray::{ArrayD, ArrayView1, ArrayView2, ArrayView4, ArrayViewMut1, ArrayViewMut2, ArrayViewMut4, IxDyn};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::float::Float;
use crate::seed::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Param<T> {
    pub name: String,
    pub value: ArrayD<T>,
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
}

impl<T: Float> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: ArrayD<T>) -> Result<ParamId> {
        let name = name.into();
        if self.params.iter().any(|p| p.name == name) {
            return Err(Error::config(format!("duplicate parameter name {name}")));
        }
        self.params.push(Param {
            name,
            value: value.as_standard_layout().into_owned(),
        });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &ArrayD<T> {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ArrayD<T> {
        &mut self.params[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn view1(&self, id: ParamId) -> ArrayView1<'_, T> {
        dim_view(self.get(id))
    }

    pub fn view2(&self, id: ParamId) -> ArrayView2<'_, T> {
        dim_view(self.get(id))
    }

    pub fn view4(&self, id: ParamId) -> ArrayView4<'_, T> {
        dim_view(self.get(id))
    }

    pub fn zeros_like(&self) -> Grads<T> {
        Grads {
            arrays: self
                .params
                .iter()
                .map(|p| ArrayD::zeros(p.value.raw_dim()))
                .collect(),
        }
    }
}

fn dim_view<T, D: ndarray::Dimension>(a: &ArrayD<T>) -> ndarray::ArrayView<'_, T, D> {
    a.view()
        .into_dimensionality::<D>()
        .expect("parameter rank fixed at construction")
}

/// Gradient buffers aligned with a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Grads<T> {
    arrays: Vec<ArrayD<T>>,
}

impl<T: Float> Grads<T> {
    pub fn get(&self, id: ParamId) -> &ArrayD<T> {
        &self.arrays[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ArrayD<T> {
        &mut self.arrays[id.0]
    }

    pub fn view1_mut(&mut self, id: ParamId) -> ArrayViewMut1<'_, T> {
        self.arrays[id.0].view_mut().into_dimensionality().expect("rank 1")
    }

    pub fn view2_mut(&mut self, id: ParamId) -> ArrayViewMut2<'_, T> {
        self.arrays[id.0].view_mut().into_dimensionality().expect("rank 2")
    }

    pub fn view4_mut(&mut self, id: ParamId) -> ArrayViewMut4<'_, T> {
        self.arrays[id.0].view_mut().into_dimensionality().expect("rank 4")
    }

    pub fn arrays(&self) -> &[ArrayD<T>] {
        &self.arrays
    }

    pub fn arrays_mut(&mut self) -> &mut [ArrayD<T>] {
        &mut self.arrays
    }

    /// L2 norm over every gradient entry, accumulated in f64.
    pub fn global_norm(&self) -> f64 {
        self.arrays
            .iter()
            .flat_map(|a| a.iter())
            .map(|&g| {
                let g = g.as_f64();
                g * g
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: T) {
        for a in &mut self.arrays {
            a.mapv_inplace(|g| g * factor);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.arrays.iter().all(|a| a.iter().all(|g| g.is_finite()))
    }
}

/// Registers parameters under a dotted name prefix and draws their initial
/// values from one seeded stream.
pub struct ParamBuilder<'a, T> {
    store: &'a mut ParamStore<T>,
    rng: &'a mut Rng,
    prefix: String,
}

impl<'a, T: Float> ParamBuilder<'a, T> {
    pub fn new(store: &'a mut ParamStore<T>, rng: &'a mut Rng) -> Self {
        Self {
            store,
            rng,
            prefix: String::new(),
        }
    }

    pub fn child(&mut self, name: &str) -> ParamBuilder<'_, T> {
        let prefix = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        };
        ParamBuilder {
            store: self.store,
            rng: self.rng,
            prefix,
        }
    }

    fn full_name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        }
    }

    pub fn add(&mut self, name: &str, value: ArrayD<T>) -> Result<ParamId> {
        let full = self.full_name(name);
        self.store.insert(full, value)
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> Result<ParamId> {
        self.add(name, ArrayD::zeros(IxDyn(shape)))
    }

    pub fn ones(&mut self, name: &str, shape: &[usize]) -> Result<ParamId> {
        self.add(name, ArrayD::ones(IxDyn(shape)))
    }

    /// Uniform in `±1/sqrt(fan_in)`: Kaiming-uniform with negative slope √5.
    pub fn kaiming_uniform(&mut self, name: &str, shape: &[usize], fan_in: usize) -> Result<ParamId> {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data: Vec<T> = (0..n)
            .map(|_| T::of(self.rng.random_range(-bound..bound)))
            .collect();
        self.add(name, ArrayD::from_shape_vec(IxDyn(shape), data).expect("shape"))
    }

    /// Stack of `blocks` orthogonal `rows × cols` matrices along the first axis.
    pub fn orthogonal_blocks(&mut self, name: &str, blocks: usize, rows: usize, cols: usize) -> Result<ParamId> {
        let mut data = Vec::with_capacity(blocks * rows * cols);
        for _ in 0..blocks {
            let q = orthogonal(self.rng, rows, cols);
            data.extend(q.into_iter().map(T::of));
        }
        self.add(
            name,
            ArrayD::from_shape_vec(IxDyn(&[blocks * rows, cols]), data).expect("shape"),
        )
    }
}

/// Row-major `rows × cols` matrix with orthonormal rows (rows ≤ cols) or
/// orthonormal columns (rows > cols), via modified Gram-Schmidt on a
/// Gaussian draw.
pub fn orthogonal(rng: &mut Rng, rows: usize, cols: usize) -> Vec<f64> {
    let (n, m) = if rows <= cols { (rows, cols) } else { (cols, rows) };
    // n vectors of length m
    let mut vecs: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..m).map(|_| StandardNormal.sample(rng)).collect())
        .collect();
    for i in 0..n {
        for j in 0..i {
            let (done, rest) = vecs.split_at_mut(i);
            let d: f64 = done[j].iter().zip(&rest[0]).map(|(a, b)| a * b).sum();
            for (v, u) in rest[0].iter_mut().zip(&done[j]) {
                *v -= d * u;
            }
        }
        let norm = vecs[i].iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        vecs[i].iter_mut().for_each(|v| *v /= norm);
    }
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[r * cols + c] = if rows <= cols { vecs[r][c] } else { vecs[c][r] };
        }
    }
    out
}
