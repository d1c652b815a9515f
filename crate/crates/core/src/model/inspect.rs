use std::fmt::Write as _;

use crate::float::Float;
use crate::params::ParamStore;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamRow {
    pub name: String,
    pub shape: Vec<usize>,
    pub count: usize,
}

pub fn param_table<T: Float>(store: &ParamStore<T>) -> Vec<ParamRow> {
    store
        .iter()
        .map(|p| ParamRow {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            count: p.value.len(),
        })
        .collect()
}

/// Plain-text table with a final `total` line.
pub fn format_table(rows: &[ParamRow]) -> String {
    let width = rows.iter().map(|r| r.name.len()).max().unwrap_or(0).max(5);
    let mut out = String::new();
    let _ = writeln!(out, "{:<width$}  {:<20}  {:>10}", "layer", "shape", "params");
    for r in rows {
        let shape = format!("{:?}", r.shape);
        let _ = writeln!(out, "{:<width$}  {:<20}  {:>10}", r.name, shape, r.count);
    }
    let total: usize = rows.iter().map(|r| r.count).sum();
    let _ = writeln!(out, "{:<width$}  {:<20}  {:>10}", "total", "", total);
    out
}
