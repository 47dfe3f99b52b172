//! Wall-clock comparison of the cubic and pruned charts.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::chart::{inside_full, inside_pruned, ChartOptions};
use super::schedule::MergeSchedule;
use crate::error::Result;
use crate::model::{Gpst, ModelConfig};
use crate::numerics::{Backend, Eager, ParamStore, Real};

#[derive(Clone, Debug, Serialize)]
pub struct ChartTiming {
    pub n: usize,
    /// Best of the repetitions, in seconds.
    pub pruned_secs: f64,
    pub pruned_cells: usize,
    /// Parallel encoding steps of the pruned chart.
    pub pruned_steps: usize,
    pub full_secs: Option<f64>,
    pub full_cells: Option<usize>,
}

impl ChartTiming {
    pub fn speedup(&self) -> Option<f64> {
        self.full_secs.map(|f| f / self.pruned_secs)
    }
}

/// A randomly initialized model whose charts accept `max_len` tokens.
pub fn timing_model<R: Real>(width: usize, max_len: usize, seed: u64) -> Result<(ParamStore<R>, Gpst)> {
    let mut cfg = ModelConfig::tiny(64);
    cfg.generator.width = width;
    cfg.generator.ffn = 2 * width;
    cfg.composition.width = width;
    cfg.composition.ffn = 2 * width;
    cfg.composition.score_dim = width;
    cfg.composition.max_len = max_len;
    let mut store = ParamStore::new();
    let model = Gpst::new(&mut store, &cfg, &mut ChaCha8Rng::seed_from_u64(seed))?;
    Ok((store, model))
}

/// Times both charts on one random sentence of `n` tokens. The pruned
/// chart follows the model's own parser; `full` turns the cubic chart off
/// for lengths where it would take too long.
pub fn time_charts<R: Real>(
    store: &ParamStore<R>,
    model: &Gpst,
    n: usize,
    reps: usize,
    full: bool,
    seed: u64,
) -> Result<ChartTiming> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<usize> = (0..n).map(|_| rng.random_range(5..model.cfg.vocab_size)).collect();
    let mut g = Eager::new(store);
    let leaves = model.leaves(&mut g, &ids)?;
    let v = model.comp.parser.scores(&mut g, &leaves)?;
    let vals: Vec<f64> = g.value(&v).data().iter().map(|x| x.f64()).collect();
    let schedule = MergeSchedule::build(&vals, &[], model.comp.cfg.window)?;
    let opts = ChartOptions::default();
    let mut best = f64::INFINITY;
    let mut cells = 0;
    for _ in 0..reps.max(1) {
        let t = Instant::now();
        let c = inside_pruned(&mut g, &model.comp, &leaves, &schedule, opts)?;
        best = best.min(t.elapsed().as_secs_f64());
        cells = c.cell_count();
    }
    let mut out = ChartTiming {
        n,
        pruned_secs: best,
        pruned_cells: cells,
        pruned_steps: schedule.levels.len(),
        full_secs: None,
        full_cells: None,
    };
    if full {
        let mut best = f64::INFINITY;
        for _ in 0..reps.max(1) {
            let t = Instant::now();
            let c = inside_full(&mut g, &model.comp, &leaves, &[], opts)?;
            best = best.min(t.elapsed().as_secs_f64());
            out.full_cells = Some(c.cell_count());
        }
        out.full_secs = Some(best);
    }
    Ok(out)
}

/// Least-squares slope of log t against log n.
pub fn fit_exponent(points: &[(usize, f64)]) -> f64 {
    let xs: Vec<f64> = points.iter().map(|p| (p.0 as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponent_of_a_power_law() {
        let pts: Vec<(usize, f64)> = [64, 128, 256].iter().map(|&n| (n, 3e-7 * (n as f64).powi(3))).collect();
        assert!((fit_exponent(&pts) - 3.0).abs() < 1e-9);
    }

    #[test]
    fn small_timing_run() {
        let (s, m) = timing_model::<f32>(8, 32, 0).unwrap();
        let t = time_charts(&s, &m, 24, 1, true, 1).unwrap();
        assert_eq!(t.full_cells, Some(24 * 25 / 2));
        assert!(t.pruned_cells < 24 * 25 / 2);
    }
}
