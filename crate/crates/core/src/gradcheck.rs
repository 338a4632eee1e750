//! Central-difference verification of tape gradients with respect to a
//! parameter store.

use crate::autodiff::{Graph, Var};
use crate::params::{Bound, ParamStore};
use crate::tensor::Tensor;

/// Norm-wise relative error of one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupError {
    pub group: String,
    /// `max|analytic - numeric| / max(max|analytic|, max|numeric|, floor)`.
    pub error: f64,
    pub analytic_max: f64,
    pub numeric_max: f64,
}

/// Denominator floor so parameters with vanishing gradients compare
/// absolutely; central differences carry roundoff of order 1e-12 here.
pub const ERROR_FLOOR: f64 = 1e-6;

fn scalar_loss(store: &ParamStore, loss: &impl Fn(&mut Graph, &Bound) -> Var) -> f64 {
    let mut g = Graph::new();
    let p = store.bind(&mut g);
    let l = loss(&mut g, &p);
    g.value(l).item()
}

/// Tape gradients of every trainable entry (`None` for buffers).
pub fn analytic(store: &ParamStore, loss: impl Fn(&mut Graph, &Bound) -> Var) -> Vec<Option<Tensor>> {
    let mut g = Graph::new();
    let p = store.bind(&mut g);
    let l = loss(&mut g, &p);
    let mut grads = g.backward(l);
    store
        .ids()
        .map(|id| {
            p.get(id)
                .map(|v| grads.take(v).unwrap_or_else(|| Tensor::zeros(store.get(id).shape())))
        })
        .collect()
}

/// Central differences for every trainable entry accepted by `select`.
pub fn numeric(
    store: &ParamStore,
    step: f64,
    select: impl Fn(&str) -> bool,
    loss: impl Fn(&mut Graph, &Bound) -> Var,
) -> Vec<Option<Tensor>> {
    let mut work = store.clone();
    store
        .ids()
        .map(|id| {
            let entry = store.entry(id);
            if !entry.trainable || !select(&entry.name) {
                return None;
            }
            let mut out = Tensor::zeros(entry.tensor.shape());
            for i in 0..entry.tensor.numel() {
                let orig = entry.tensor.data()[i];
                work.get_mut(id).data_mut()[i] = orig + step;
                let plus = scalar_loss(&work, &loss);
                work.get_mut(id).data_mut()[i] = orig - step;
                let minus = scalar_loss(&work, &loss);
                work.get_mut(id).data_mut()[i] = orig;
                out.data_mut()[i] = (plus - minus) / (2.0 * step);
            }
            Some(out)
        })
        .collect()
}

/// Per-entry errors for every entry present in both gradient lists.
pub fn compare(store: &ParamStore, analytic: &[Option<Tensor>], numeric: &[Option<Tensor>]) -> Vec<GroupError> {
    store
        .ids()
        .zip(analytic.iter().zip(numeric))
        .filter_map(|(id, pair)| match pair {
            (Some(a), Some(n)) => {
                let diff = a.data().iter().zip(n.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
                let (am, nm) = (a.max_abs(), n.max_abs());
                Some(GroupError {
                    group: store.entry(id).name.clone(),
                    error: diff / am.max(nm).max(ERROR_FLOOR),
                    analytic_max: am,
                    numeric_max: nm,
                })
            }
            _ => None,
        })
        .collect()
}

/// Analytic against numeric for the selected entries.
pub fn check(
    store: &ParamStore,
    step: f64,
    select: impl Fn(&str) -> bool,
    loss: impl Fn(&mut Graph, &Bound) -> Var,
) -> Vec<GroupError> {
    let a = analytic(store, &loss);
    let n = numeric(store, step, select, &loss);
    compare(store, &a, &n)
}
