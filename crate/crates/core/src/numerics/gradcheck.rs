//! Central finite-difference verification of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::backend::{Backend, LossRoot};
use super::graph::{Graph, Var};
use super::params::{GradBuffer, ParamId, ParamStore};
use crate::error::{Error, Result};

/// Denominator floor for the relative error, so coordinates whose true
/// derivative is zero are compared absolutely.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst: Option<(String, usize, f64, f64)>,
    pub coords: usize,
}

/// A scalar objective: one or more loss roots whose values are summed.
pub type Roots = Vec<(Var, Option<LossRoot>)>;

pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR)
}

/// Total value and summed per-root gradients of `f` at `store`.
pub fn evaluate<F>(store: &ParamStore<f64>, f: &F) -> Result<(f64, GradBuffer<f64>)>
where
    F: Fn(&mut Graph<'_, f64>) -> Result<Roots>,
{
    let mut g = Graph::new(store);
    let roots = f(&mut g)?;
    let mut total = 0.0;
    let mut grads = GradBuffer::new(store.len());
    for (v, label) in roots {
        total += g.scalar_value(&v);
        let pass = g.backward(v, label)?;
        grads.merge(pass.params(), 1.0);
    }
    if !total.is_finite() {
        return Err(Error::NonFinite(format!("objective value {total}")));
    }
    Ok((total, grads))
}

fn value<F>(store: &ParamStore<f64>, f: &F) -> Result<f64>
where
    F: Fn(&mut Graph<'_, f64>) -> Result<Roots>,
{
    let mut g = Graph::new(store);
    let total: f64 = f(&mut g)?.iter().map(|(v, _)| g.scalar_value(v)).sum();
    if !total.is_finite() {
        return Err(Error::NonFinite(format!("objective value {total}")));
    }
    Ok(total)
}

/// Compares tape gradients of `f` with central differences on up to
/// `max_coords` randomly chosen parameter coordinates (all of them when
/// fewer exist).
pub fn grad_check<F>(
    store: &ParamStore<f64>,
    eps: f64,
    max_coords: usize,
    seed: u64,
    f: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_, f64>) -> Result<Roots>,
{
    let (_, analytic) = evaluate(store, &f)?;
    let coords: Vec<(ParamId, usize)> = store
        .iter()
        .flat_map(|(id, p)| (0..p.value.len()).map(move |i| (id, i)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen: Vec<usize> = if coords.len() <= max_coords {
        (0..coords.len()).collect()
    } else {
        sample(&mut rng, coords.len(), max_coords).into_vec()
    };
    let mut report = GradCheckReport { max_rel_err: 0.0, worst: None, coords: chosen.len() };
    for ci in chosen {
        let (id, i) = coords[ci];
        let mut probe = store.clone();
        let x0 = probe.get(id).data()[i];
        probe.value_mut(id).data_mut()[i] = x0 + eps;
        let up = value(&probe, &f)?;
        probe.value_mut(id).data_mut()[i] = x0 - eps;
        let down = value(&probe, &f)?;
        let numeric = (up - down) / (2.0 * eps);
        let a = analytic.get(id).map_or(0.0, |g| g[i]);
        let err = relative_error(a, numeric);
        if err > report.max_rel_err || report.worst.is_none() {
            report.max_rel_err = err;
            report.worst = Some((store.name(id).to_string(), i, a, numeric));
        }
    }
    Ok(report)
}
