//! Inside and outside charts over constituent spans.

use std::collections::{BTreeMap, HashMap};

use super::fns::CompositionModel;
use super::schedule::{Cell, MergeSchedule, Span};
use super::tree::{crosses, BinaryTree};
use crate::error::{Error, Result};
use crate::numerics::{Backend, LossRoot, Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ChartOptions {
    /// Bar gradients of the autoregressive loss from the split scores.
    pub grad_stop: bool,
}

impl Default for ChartOptions {
    fn default() -> Self {
        ChartOptions { grad_stop: true }
    }
}

/// Cells encoded in one parallel step.
pub struct Level<T> {
    pub cells: Vec<Span>,
    pub splits: Vec<Vec<usize>>,
    /// Inside vectors, `[cells, width]`.
    pub inside: T,
    /// Weighted heights, `[cells, 1]`.
    pub heights: T,
    /// Split scores `ā` and weights `ŵ` as `[pairs, 1]` in (cell, split)
    /// order. Absent on the leaf level.
    pub scores: Option<T>,
    pub weights: Option<T>,
}

pub struct InsideChart<T> {
    pub n: usize,
    /// `levels[0]` holds the leaves in token order.
    pub levels: Vec<Level<T>>,
    loc: HashMap<Span, (usize, usize)>,
}

impl<T: Clone> InsideChart<T> {
    pub fn locate(&self, span: Span) -> Option<(usize, usize)> {
        self.loc.get(&span).copied()
    }

    pub fn contains(&self, span: Span) -> bool {
        self.loc.contains_key(&span)
    }

    pub fn root(&self) -> Span {
        (0, self.n - 1)
    }

    /// Materialized cells, leaves included.
    pub fn cell_count(&self) -> usize {
        self.loc.len()
    }

    /// Parallel steps spent above the leaves.
    pub fn steps(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn splits(&self, span: Span) -> Option<&[usize]> {
        let (l, r) = self.locate(span)?;
        (l > 0).then(|| self.levels[l].splits[r].as_slice())
    }

    pub fn spans(&self) -> impl Iterator<Item = Span> + '_ {
        self.levels.iter().flat_map(|l| l.cells.iter().copied())
    }

    fn sources(&self, spans: &[Span], pick: impl Fn(&Level<T>) -> &T) -> Result<Vec<(&T, usize)>> {
        spans
            .iter()
            .map(|s| {
                let (l, r) = self.locate(*s).ok_or_else(|| Error::Chart(format!("span {s:?} is not in the chart")))?;
                Ok((pick(&self.levels[l]), r))
            })
            .collect()
    }

    /// Inside vectors of `spans`, stacked as rows.
    pub fn gather_inside<R: Real, B: Backend<R, T = T>>(&self, g: &mut B, spans: &[Span]) -> Result<T> {
        let src = self.sources(spans, |l| &l.inside)?;
        g.gather(&src)
    }

    pub fn gather_heights<R: Real, B: Backend<R, T = T>>(&self, g: &mut B, spans: &[Span]) -> Result<T> {
        let src = self.sources(spans, |l| &l.heights)?;
        g.gather(&src)
    }

    /// Weighted height of the whole sentence, `[1, 1]`.
    pub fn root_height<R: Real, B: Backend<R, T = T>>(&self, g: &mut B) -> Result<T> {
        self.gather_heights(g, &[self.root()])
    }

    /// Split scores of one cell, in split order.
    pub fn scores<R: Real, B: Backend<R, T = T>>(&self, g: &B, span: Span) -> Option<Vec<f64>> {
        self.pair_values(g, span, |l| l.scores.as_ref())
    }

    pub fn weights<R: Real, B: Backend<R, T = T>>(&self, g: &B, span: Span) -> Option<Vec<f64>> {
        self.pair_values(g, span, |l| l.weights.as_ref())
    }

    fn pair_values<R: Real, B: Backend<R, T = T>>(
        &self,
        g: &B,
        span: Span,
        pick: impl Fn(&Level<T>) -> Option<&T>,
    ) -> Option<Vec<f64>> {
        let (l, r) = self.locate(span)?;
        let level = &self.levels[l];
        let off: usize = level.splits[..r].iter().map(Vec::len).sum();
        let len = level.splits[r].len();
        let data = g.value(pick(level)?).data();
        Some(data[off..off + len].iter().map(|x| x.f64()).collect())
    }
}

fn leaf_level<R: Real, B: Backend<R>>(g: &mut B, leaves: &B::T) -> Level<B::T> {
    let n = g.value(leaves).rows();
    let heights = g.constant(Tensor::zeros(&[n, 1]));
    Level {
        cells: (0..n).map(|i| (i, i)).collect(),
        splits: vec![Vec::new(); n],
        inside: leaves.clone(),
        heights,
        scores: None,
        weights: None,
    }
}

fn new_chart<R: Real, B: Backend<R>>(g: &mut B, leaves: &B::T) -> Result<InsideChart<B::T>> {
    let n = g.value(leaves).rows();
    if n == 0 {
        return Err(Error::Chart("empty sentence".into()));
    }
    let level = leaf_level(g, leaves);
    let loc = level.cells.iter().enumerate().map(|(r, &s)| (s, (0, r))).collect();
    Ok(InsideChart { n, levels: vec![level], loc })
}

/// Encodes one batch of cells whose children are already in the chart.
fn encode_level<R: Real, B: Backend<R>>(
    g: &mut B,
    model: &CompositionModel,
    chart: &mut InsideChart<B::T>,
    cells: Vec<Cell>,
    opts: ChartOptions,
) -> Result<()> {
    let mut lefts = Vec::new();
    let mut rights = Vec::new();
    let mut segs = Vec::with_capacity(cells.len());
    for c in &cells {
        if c.splits.is_empty() {
            return Err(Error::Chart(format!("span {:?} has no valid split", c.span)));
        }
        for &k in &c.splits {
            lefts.push((c.span.0, k));
            rights.push((k + 1, c.span.1));
        }
        segs.push(c.splits.len());
    }
    let l = chart.gather_inside(g, &lefts)?;
    let r = chart.gather_inside(g, &rights)?;
    let hl = chart.gather_heights(g, &lefts)?;
    let hr = chart.gather_heights(g, &rights)?;
    let composed = model.compose(g, &l, &r)?;
    let scores = model.score_alpha(g, &l, &r)?;
    let mut weights = g.seg_softmax(&scores, &segs)?;
    if opts.grad_stop {
        weights = g.barrier(&weights, LossRoot::AutoRegression)?;
    }
    let inside = g.seg_weighted_sum(&weights, &composed, &segs)?;
    let hmax = g.maximum(&hl, &hr)?;
    let hbar = g.add_scalar(&hmax, 1.0)?;
    let heights = g.seg_weighted_sum(&weights, &hbar, &segs)?;
    let li = chart.levels.len();
    for (r, c) in cells.iter().enumerate() {
        chart.loc.insert(c.span, (li, r));
    }
    let (spans, splits) = cells.into_iter().map(|c| (c.span, c.splits)).unzip();
    chart.levels.push(Level {
        cells: spans,
        splits,
        inside,
        heights,
        scores: Some(scores),
        weights: Some(weights),
    });
    Ok(())
}

/// Cubic chart: every span that respects the atomic spans, filled by width.
pub fn inside_full<R: Real, B: Backend<R>>(
    g: &mut B,
    model: &CompositionModel,
    leaves: &B::T,
    atomic: &[Span],
    opts: ChartOptions,
) -> Result<InsideChart<B::T>> {
    let mut chart = new_chart(g, leaves)?;
    let n = chart.n;
    for w in 2..=n {
        let mut cells = Vec::new();
        for i in 0..=n - w {
            let span = (i, i + w - 1);
            if crosses(span, atomic) {
                continue;
            }
            let splits: Vec<usize> = (span.0..span.1)
                .filter(|&k| chart.contains((span.0, k)) && chart.contains((k + 1, span.1)))
                .collect();
            cells.push(Cell { span, splits });
        }
        if !cells.is_empty() {
            encode_level(g, model, &mut chart, cells, opts)?;
        }
    }
    if !chart.contains(chart.root()) {
        return Err(Error::Chart("atomic spans leave the sentence without a root".into()));
    }
    Ok(chart)
}

/// Chart restricted to the cells of a merge schedule, one level per step.
pub fn inside_pruned<R: Real, B: Backend<R>>(
    g: &mut B,
    model: &CompositionModel,
    leaves: &B::T,
    schedule: &MergeSchedule,
    opts: ChartOptions,
) -> Result<InsideChart<B::T>> {
    let mut chart = new_chart(g, leaves)?;
    if schedule.n != chart.n {
        return Err(Error::Chart(format!(
            "schedule covers {} tokens, sentence has {}",
            schedule.n, chart.n
        )));
    }
    for level in &schedule.levels {
        encode_level(g, model, &mut chart, level.clone(), opts)?;
    }
    Ok(chart)
}

/// Outside vectors aligned with the inside levels.
pub struct OutsideLevel<T> {
    /// For each cell, its `(parent, sibling)` spans.
    pub parents: Vec<Vec<(Span, Span)>>,
    pub outside: T,
    pub scores: Option<T>,
    pub weights: Option<T>,
}

pub struct OutsideChart<T> {
    pub levels: Vec<OutsideLevel<T>>,
}

impl<T> OutsideChart<T> {
    /// Outside vectors of the tokens, `[n, width]` in token order.
    pub fn leaves(&self) -> &T {
        &self.levels[0].outside
    }

    /// Outside vectors of `spans`, stacked as rows.
    pub fn gather<R: Real, B: Backend<R, T = T>>(&self, g: &mut B, chart: &InsideChart<T>, spans: &[Span]) -> Result<T>
    where
        T: Clone,
    {
        let src = spans
            .iter()
            .map(|s| {
                let (l, r) = chart.locate(*s).ok_or_else(|| Error::Chart(format!("span {s:?} is not in the chart")))?;
                Ok((&self.levels[l].outside, r))
            })
            .collect::<Result<Vec<_>>>()?;
        g.gather(&src)
    }
}

pub fn outside<R: Real, B: Backend<R>>(
    g: &mut B,
    model: &CompositionModel,
    chart: &InsideChart<B::T>,
) -> Result<OutsideChart<B::T>> {
    let root = chart.root();
    let mut parents: HashMap<Span, Vec<(Span, Span)>> = HashMap::new();
    for level in &chart.levels[1..] {
        for (c, ks) in level.cells.iter().zip(&level.splits) {
            for &k in ks {
                parents.entry((c.0, k)).or_default().push((*c, (k + 1, c.1)));
                parents.entry((k + 1, c.1)).or_default().push((*c, (c.0, k)));
            }
        }
    }
    let mut done: Vec<Option<OutsideLevel<B::T>>> = (0..chart.levels.len()).map(|_| None).collect();
    for li in (0..chart.levels.len()).rev() {
        let level = &chart.levels[li];
        if level.cells.contains(&root) {
            if level.cells.len() != 1 {
                return Err(Error::Chart("root shares its level with other cells".into()));
            }
            let p = g.param(model.root);
            done[li] = Some(OutsideLevel { parents: vec![Vec::new()], outside: p, scores: None, weights: None });
            continue;
        }
        let mut po = Vec::new();
        let mut si = Vec::new();
        let mut side = Vec::new();
        let mut segs = Vec::with_capacity(level.cells.len());
        let mut plist = Vec::with_capacity(level.cells.len());
        for c in &level.cells {
            let ps = parents
                .get(c)
                .filter(|p| !p.is_empty())
                .ok_or_else(|| Error::Chart(format!("span {c:?} has no parent")))?;
            for &(p, s) in ps {
                let (pl, pr) = chart.locate(p).expect("parent is in the chart");
                let o = done[pl].as_ref().ok_or_else(|| Error::Chart(format!("parent {p:?} not yet decoded")))?;
                po.push((&o.outside, pr));
                let (sl, sr) = chart.locate(s).ok_or_else(|| Error::Chart(format!("sibling {s:?} missing")))?;
                si.push((&chart.levels[sl].inside, sr));
                side.push(s.0 > c.1);
            }
            segs.push(ps.len());
            plist.push(ps.clone());
        }
        let pt = g.gather(&po)?;
        let st = g.gather(&si)?;
        drop(po);
        let dec = model.decompose(g, &pt, &st, &side)?;
        let scores = model.score_beta(g, &pt, &st, &side)?;
        let weights = g.seg_softmax(&scores, &segs)?;
        let out = g.seg_weighted_sum(&weights, &dec, &segs)?;
        done[li] = Some(OutsideLevel { parents: plist, outside: out, scores: Some(scores), weights: Some(weights) });
    }
    Ok(OutsideChart { levels: done.into_iter().map(|l| l.expect("every level decoded")).collect() })
}

/// Top-down argmax of the split scores from the root; ties go to the
/// smallest split.
pub fn induce_tree<R: Real, B: Backend<R>>(g: &B, chart: &InsideChart<B::T>) -> Result<BinaryTree> {
    let mut splits = BTreeMap::new();
    let mut stack = vec![chart.root()];
    while let Some(span) = stack.pop() {
        if span.0 == span.1 {
            continue;
        }
        let ks = chart.splits(span).ok_or_else(|| Error::Chart(format!("span {span:?} is not in the chart")))?;
        let scores = chart.scores(g, span).expect("internal cell has scores");
        let mut best = 0;
        for (t, &s) in scores.iter().enumerate() {
            if s > scores[best] {
                best = t;
            }
        }
        let k = ks[best];
        splits.insert(span, k);
        stack.push((span.0, k));
        stack.push((k + 1, span.1));
    }
    BinaryTree::from_splits(chart.n, splits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::composition::CompositionConfig;
    use crate::numerics::{Eager, ParamStore};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(seed: u64) -> (ParamStore<f64>, CompositionModel) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let cfg = CompositionConfig { width: 8, ffn: 16, score_dim: 8, ..Default::default() };
        let m = CompositionModel::new(&mut s, &cfg, 8, &mut rng).unwrap();
        (s, m)
    }

    fn leaves(n: usize, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::new(vec![n, 8], (0..n * 8).map(|_| rng.random::<f64>() - 0.5).collect()).unwrap()
    }

    #[test]
    fn single_token_chart() {
        let (s, m) = setup(1);
        let mut g = Eager::new(&s);
        let x = g.constant(leaves(1, 2));
        let c = inside_full(&mut g, &m, &x, &[], ChartOptions::default()).unwrap();
        assert_eq!(c.cell_count(), 1);
        assert_eq!(c.steps(), 0);
        let o = outside(&mut g, &m, &c).unwrap();
        assert_eq!(o.leaves().data(), s.get(m.root).data());
        assert_eq!(induce_tree(&g, &c).unwrap(), BinaryTree::leaf());
    }

    #[test]
    fn two_tokens_compose_once() {
        let (s, m) = setup(3);
        let mut g = Eager::new(&s);
        let x = g.constant(leaves(2, 4));
        let c = inside_full(&mut g, &m, &x, &[], ChartOptions::default()).unwrap();
        assert_eq!(c.weights(&g, (0, 1)).unwrap(), [1.0]);
        let a = g.select_rows(&x, &[0]).unwrap();
        let b = g.select_rows(&x, &[1]).unwrap();
        let direct = m.compose(&mut g, &a, &b).unwrap();
        let got = c.gather_inside(&mut g, &[(0, 1)]).unwrap();
        assert_eq!(got.data(), direct.data());
        let o = outside(&mut g, &m, &c).unwrap();
        let root = g.param(m.root);
        let expect = m.decompose(&mut g, &root, &b, &[true]).unwrap();
        assert_eq!(o.leaves().row_slice(0), expect.data());
    }

    #[test]
    fn weights_normalize_and_heights_grow() {
        let (s, m) = setup(5);
        let mut g = Eager::new(&s);
        let x = g.constant(leaves(6, 6));
        let c = inside_full(&mut g, &m, &x, &[], ChartOptions::default()).unwrap();
        for span in c.spans().filter(|s| s.0 < s.1) {
            let w: f64 = c.weights(&g, span).unwrap().iter().sum();
            assert!((w - 1.0).abs() < 1e-12);
        }
        let h = c.root_height(&mut g).unwrap().item();
        assert!((3.0..=5.0).contains(&h), "root height {h}");
        let o = outside(&mut g, &m, &c).unwrap();
        for level in &o.levels[..o.levels.len() - 1] {
            let w = level.weights.as_ref().unwrap();
            let total: f64 = w.data().iter().sum();
            assert!((total - level.parents.len() as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn unpruned_schedule_reproduces_full_chart() {
        let (s, m) = setup(7);
        let mut g = Eager::new(&s);
        let x = g.constant(leaves(6, 8));
        let atomic = [(2, 3)];
        let full = inside_full(&mut g, &m, &x, &atomic, ChartOptions::default()).unwrap();
        let sched = MergeSchedule::unpruned(6, &atomic).unwrap();
        let pruned = inside_pruned(&mut g, &m, &x, &sched, ChartOptions::default()).unwrap();
        assert_eq!(full.cell_count(), pruned.cell_count());
        for span in full.spans() {
            let a = full.gather_inside(&mut g, &[span]).unwrap();
            let b = pruned.gather_inside(&mut g, &[span]).unwrap();
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() < 1e-10);
            }
        }
        assert!(induce_tree(&g, &full).unwrap().respects(&atomic));
    }

    #[test]
    fn pruned_chart_is_linear_and_induces_a_tree() {
        let (s, m) = setup(9);
        let mut g = Eager::new(&s);
        let n = 24;
        let x = g.constant(leaves(n, 10));
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let v: Vec<f64> = (0..n - 1).map(|_| rng.random()).collect();
        let sched = MergeSchedule::build(&v, &[], 3).unwrap();
        let c = inside_pruned(&mut g, &m, &x, &sched, ChartOptions::default()).unwrap();
        assert_eq!(c.cell_count(), n + sched.internal_cells());
        assert!(c.cell_count() < n * (n + 1) / 2);
        let t = induce_tree(&g, &c).unwrap();
        assert_eq!(t.len(), n);
        assert!(outside(&mut g, &m, &c).is_ok());
    }

    #[test]
    fn schedule_length_mismatch_is_an_error() {
        let (s, m) = setup(1);
        let mut g = Eager::new(&s);
        let x = g.constant(leaves(3, 1));
        let sched = MergeSchedule::build(&[0.0; 3], &[], 3).unwrap();
        assert!(inside_pruned(&mut g, &m, &x, &sched, ChartOptions::default()).is_err());
    }
}
