//! Finite-difference checks of analytic gradients.

use ndarray::{Array4, ArrayD};
use rand::Rng as _;

use crate::blocks::Layer;
use crate::error::Result;
use crate::params::{Grads, ParamStore};
use crate::seed::Rng;

/// Worst relative error over the probed coordinates.
#[derive(Clone, Copy, Debug, Default)]
pub struct GradReport {
    pub max_rel_err: f64,
    pub probes: usize,
}

impl GradReport {
    fn record(&mut self, analytic: f64, numeric: f64, floor: f64) {
        let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor);
        self.max_rel_err = self.max_rel_err.max(err);
        self.probes += 1;
    }
}

fn projected(y: &Array4<f64>, r: &Array4<f64>) -> f64 {
    y.iter().zip(r).map(|(a, b)| a * b).sum()
}

/// Compares backward-pass gradients of `L = Σ y ⊙ r` (random `r`) against
/// central differences, probing `probes` input entries and `probes` entries
/// of every parameter array.
pub fn check_layer<L: Layer<f64>>(layer: &L, ps: &mut ParamStore<f64>, x: &Array4<f64>, probes: usize, rng: &mut Rng) -> Result<GradReport> {
    let (y, cache) = layer.forward_train(ps, x)?;
    let r = Array4::from_shape_fn(y.raw_dim(), |_| rng.random_range(-1.0..1.0));
    let mut grads = ps.zeros_like();
    let dx = layer.backward(ps, cache, &r, &mut grads);

    let h = 1e-4;
    let floor = 1e-6;
    let mut report = GradReport::default();
    let mut xp = x.clone();
    for _ in 0..probes {
        let i = rng.random_range(0..x.len());
        let orig = x.as_slice().expect("standard layout")[i];
        xp.as_slice_mut().unwrap()[i] = orig + h;
        let up = projected(&layer.forward(ps, &xp)?, &r);
        xp.as_slice_mut().unwrap()[i] = orig - h;
        let down = projected(&layer.forward(ps, &xp)?, &r);
        xp.as_slice_mut().unwrap()[i] = orig;
        report.record(dx.as_slice().unwrap()[i], (up - down) / (2.0 * h), floor);
    }

    let ids: Vec<_> = ps.ids().collect();
    for id in ids {
        let n = ps.get(id).len();
        for _ in 0..probes.min(n) {
            let i = rng.random_range(0..n);
            let orig = flat(ps.get(id))[i];
            flat_mut(ps.get_mut(id))[i] = orig + h;
            let up = projected(&layer.forward(ps, x)?, &r);
            flat_mut(ps.get_mut(id))[i] = orig - h;
            let down = projected(&layer.forward(ps, x)?, &r);
            flat_mut(ps.get_mut(id))[i] = orig;
            report.record(flat(grads.get(id))[i], (up - down) / (2.0 * h), floor);
        }
    }
    Ok(report)
}

/// Checks analytic parameter gradients of an arbitrary scalar loss. `loss`
/// reads the state, `store` exposes its parameters for perturbation. Errors
/// are relative to `max(|analytic|, |numeric|, floor)` where the floor is
/// `1e-3` times the largest probed gradient, so entries that are zero up to
/// rounding do not dominate.
pub fn check_params<S>(
    state: &mut S,
    store: impl Fn(&mut S) -> &mut ParamStore<f64>,
    loss: impl Fn(&S) -> Result<f64>,
    grads: &Grads<f64>,
    probes: usize,
    h: f64,
    rng: &mut Rng,
) -> Result<GradReport> {
    let ids: Vec<_> = store(state).ids().collect();
    let mut pairs = Vec::new();
    for id in ids {
        let n = store(state).get(id).len();
        for _ in 0..probes.min(n) {
            let i = rng.random_range(0..n);
            let orig = flat(store(state).get(id))[i];
            flat_mut(store(state).get_mut(id))[i] = orig + h;
            let up = loss(state)?;
            flat_mut(store(state).get_mut(id))[i] = orig - h;
            let down = loss(state)?;
            flat_mut(store(state).get_mut(id))[i] = orig;
            pairs.push((flat(grads.get(id))[i], (up - down) / (2.0 * h)));
        }
    }
    let scale = pairs.iter().map(|(a, n)| a.abs().max(n.abs())).fold(0.0, f64::max);
    let mut report = GradReport::default();
    for (a, n) in pairs {
        report.record(a, n, 1e-3 * scale);
    }
    Ok(report)
}

fn flat(a: &ArrayD<f64>) -> &[f64] {
    a.as_slice().expect("parameters are contiguous")
}

fn flat_mut(a: &mut ArrayD<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("parameters are contiguous")
}
