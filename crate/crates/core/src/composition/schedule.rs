//! Merge schedules for the pruned chart.
//!
//! Boundary scores from the top-down parser define a pruning tree: the
//! sentence is split recursively at the highest-priority boundary. Its
//! merge points are grouped into batches by node height. Replaying the
//! batches bottom-up over a sliding window of current units yields the
//! cells that get encoded, together with their valid split sets.

use std::collections::{HashMap, HashSet};

use super::tree::{crosses, BinaryTree};
use crate::error::{Error, Result};

pub type Span = (usize, usize);

/// A chart cell and its valid splits. Split `k` joins `(i, k)` and `(k + 1, j)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Cell {
    pub span: Span,
    pub splits: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct MergeSchedule {
    pub n: usize,
    /// Boundaries in the order the pruning tree splits them.
    pub split_order: Vec<usize>,
    /// Merge boundaries grouped by their node height in the pruning tree,
    /// lowest first.
    pub batches: Vec<Vec<usize>>,
    pub tree: BinaryTree,
    /// Internal cells grouped by dependency depth. Every split of a cell in
    /// `levels[d]` joins cells from earlier levels or leaves.
    pub levels: Vec<Vec<Cell>>,
}

fn interior(k: usize, atomic: &[Span]) -> bool {
    atomic.iter().any(|&(a, b)| a <= k && k < b)
}

/// Orders boundaries by priority: boundaries inside an atomic span come
/// last, then higher score first, then the smaller index.
fn priority_cmp(v: &[f64], atomic: &[Span], a: usize, b: usize) -> std::cmp::Ordering {
    let ka = (!interior(a, atomic), v[a]);
    let kb = (!interior(b, atomic), v[b]);
    kb.0.cmp(&ka.0)
        .then(kb.1.partial_cmp(&ka.1).unwrap_or(std::cmp::Ordering::Equal))
        .then(a.cmp(&b))
}

impl MergeSchedule {
    /// Builds the schedule from one score per boundary (`v.len() == n - 1`).
    /// `window` is the largest number of current units a cell may cover.
    pub fn build(v: &[f64], atomic: &[Span], window: usize) -> Result<Self> {
        if window < 2 {
            return Err(Error::Config(format!("merge window must be at least 2, got {window}")));
        }
        if v.iter().any(|x| x.is_nan()) {
            return Err(Error::NonFinite("boundary score is NaN".into()));
        }
        let n = v.len() + 1;
        let mut order: Vec<usize> = (0..v.len()).collect();
        order.sort_by(|&a, &b| priority_cmp(v, atomic, a, b));

        // Pruning tree: split each span at its best boundary.
        let mut splits = std::collections::BTreeMap::new();
        let mut stack = vec![(0, n - 1)];
        while let Some((i, j)) = stack.pop() {
            if i == j {
                continue;
            }
            let k = (i..j).min_by(|&a, &b| priority_cmp(v, atomic, a, b)).unwrap();
            splits.insert((i, j), k);
            stack.push((i, k));
            stack.push((k + 1, j));
        }
        let tree = BinaryTree::from_splits(n, splits)?;

        let mut heights: HashMap<Span, usize> = HashMap::new();
        let mut batches: Vec<Vec<usize>> = Vec::new();
        for s in tree.postorder() {
            let h = match tree.split(s) {
                Some(k) => 1 + heights[&(s.0, k)].max(heights[&(k + 1, s.1)]),
                None => 0,
            };
            heights.insert(s, h);
            if let Some(k) = tree.split(s) {
                if batches.len() < h {
                    batches.resize(h, Vec::new());
                }
                batches[h - 1].push(k);
            }
        }
        for b in &mut batches {
            b.sort_unstable();
        }

        let mut units: Vec<Span> = (0..n).map(|i| (i, i)).collect();
        let mut cells: Vec<Cell> = Vec::new();
        let mut seen: HashSet<Span> = HashSet::new();
        let add_runs = |units: &[Span], cells: &mut Vec<Cell>, seen: &mut HashSet<Span>| {
            for c in 1..=window.min(units.len()) {
                for s in 0..=units.len() - c {
                    let span = (units[s].0, units[s + c - 1].1);
                    if span.0 == span.1 || seen.contains(&span) || crosses(span, atomic) {
                        continue;
                    }
                    let have = |sp: Span| sp.0 == sp.1 || seen.contains(&sp);
                    let ks: Vec<usize> = (s..s + c - 1)
                        .map(|t| units[t].1)
                        .filter(|&k| have((span.0, k)) && have((k + 1, span.1)))
                        .collect();
                    if ks.is_empty() {
                        continue;
                    }
                    seen.insert(span);
                    cells.push(Cell { span, splits: ks });
                }
            }
        };
        add_runs(&units, &mut cells, &mut seen);
        for batch in &batches {
            for &k in batch {
                let u = units
                    .iter()
                    .position(|s| s.1 == k)
                    .ok_or_else(|| Error::Chart(format!("merge point {k} is not a unit boundary")))?;
                let right = units.remove(u + 1);
                units[u].1 = right.1;
            }
            add_runs(&units, &mut cells, &mut seen);
        }
        if n > 1 && !seen.contains(&(0, n - 1)) {
            return Err(Error::Chart("merge schedule never reached the root span".into()));
        }
        Ok(MergeSchedule { n, split_order: order, batches, tree, levels: prune_and_level(n, cells) })
    }

    /// Every span that does not cross an atomic span, with all valid splits.
    pub fn unpruned(n: usize, atomic: &[Span]) -> Result<Self> {
        if n == 0 {
            return Err(Error::Chart("empty sentence".into()));
        }
        let mut cells = Vec::new();
        for w in 2..=n {
            for i in 0..=n - w {
                let span = (i, i + w - 1);
                if crosses(span, atomic) {
                    continue;
                }
                let ks: Vec<usize> = (span.0..span.1)
                    .filter(|&k| !crosses((span.0, k), atomic) && !crosses((k + 1, span.1), atomic))
                    .collect();
                if ks.is_empty() {
                    return Err(Error::Chart(format!("span {span:?} has no valid split")));
                }
                cells.push(Cell { span, splits: ks });
            }
        }
        Ok(MergeSchedule {
            n,
            split_order: Vec::new(),
            batches: Vec::new(),
            tree: BinaryTree::right_branching(n),
            levels: prune_and_level(n, cells),
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Merge boundaries, first merged first.
    pub fn merge_order(&self) -> Vec<usize> {
        self.split_order.iter().rev().copied().collect()
    }

    /// Number of internal cells the pruned chart materializes.
    pub fn internal_cells(&self) -> usize {
        self.levels.iter().map(Vec::len).sum()
    }

    pub fn cells(&self) -> impl Iterator<Item = &Cell> {
        self.levels.iter().flatten()
    }

    /// Parent map: for each non-root span, the `(parent, split)` pairs that
    /// use it as a child.
    pub fn parents(&self) -> HashMap<Span, Vec<(Span, usize)>> {
        let mut p: HashMap<Span, Vec<(Span, usize)>> = HashMap::new();
        for c in self.cells() {
            let (i, j) = c.span;
            for &k in &c.splits {
                p.entry((i, k)).or_default().push((c.span, k));
                p.entry((k + 1, j)).or_default().push((c.span, k));
            }
        }
        p
    }
}

/// Drops cells unreachable from the root and groups the rest by dependency
/// depth, keeping insertion order inside a level.
fn prune_and_level(n: usize, cells: Vec<Cell>) -> Vec<Vec<Cell>> {
    if n < 2 {
        return Vec::new();
    }
    let index: HashMap<Span, usize> = cells.iter().enumerate().map(|(i, c)| (c.span, i)).collect();
    let mut live = vec![false; cells.len()];
    let mut stack = vec![(0, n - 1)];
    while let Some(span) = stack.pop() {
        let Some(&ci) = index.get(&span) else { continue };
        if live[ci] {
            continue;
        }
        live[ci] = true;
        for &k in &cells[ci].splits {
            stack.push((span.0, k));
            stack.push((k + 1, span.1));
        }
    }
    let mut depth: HashMap<Span, usize> = HashMap::new();
    let mut levels: Vec<Vec<Cell>> = Vec::new();
    for (c, keep) in cells.into_iter().zip(live) {
        if !keep {
            continue;
        }
        let d = |s: Span| if s.0 == s.1 { 0 } else { depth[&s] };
        let lvl = c.splits.iter().map(|&k| d((c.span.0, k)).max(d((k + 1, c.span.1)))).max().unwrap() + 1;
        depth.insert(c.span, lvl);
        if levels.len() < lvl {
            levels.resize(lvl, Vec::new());
        }
        levels[lvl - 1].push(c);
    }
    levels
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_traced_example() {
        let s = MergeSchedule::build(&[3.0, 1.0, 2.0], &[], 3).unwrap();
        assert_eq!(s.split_order, [0, 2, 1]);
        assert_eq!(s.merge_order(), [1, 2, 0]);
        assert_eq!(s.batches, [vec![1], vec![2], vec![0]]);
        assert_eq!(s.tree.to_bracketed(&["a", "b", "c", "d"]), "(a ((b c) d))");
    }

    #[test]
    fn uniform_scores_split_right_branching() {
        let s = MergeSchedule::build(&[0.5; 6], &[], 3).unwrap();
        assert_eq!(s.tree, BinaryTree::right_branching(7));
        assert_eq!(s.batches.len(), 6);
    }

    #[test]
    fn balanced_tree_takes_log_batches() {
        let s = MergeSchedule::build(&[1.0, 2.0, 1.0, 3.0, 1.0, 2.0, 1.0], &[], 3).unwrap();
        assert_eq!(s.batches.len(), 3);
        assert_eq!(s.batches[0], [0, 2, 4, 6]);
    }

    #[test]
    fn single_token_has_no_cells() {
        let s = MergeSchedule::build(&[], &[], 3).unwrap();
        assert_eq!(s.n, 1);
        assert!(s.levels.is_empty() && s.batches.is_empty());
    }

    #[test]
    fn atomic_boundaries_merge_first() {
        // The highest score sits inside the atomic span (1, 2).
        let s = MergeSchedule::build(&[0.1, 5.0, 0.2], &[(1, 2)], 3).unwrap();
        assert!(s.tree.respects(&[(1, 2)]));
        assert_eq!(s.batches[0], [1]);
    }

    #[test]
    fn unpruned_matches_full_chart_size() {
        let s = MergeSchedule::unpruned(5, &[]).unwrap();
        assert_eq!(s.internal_cells(), 10);
        assert_eq!(s.levels.len(), 4);
        let c = MergeSchedule::unpruned(4, &[(1, 2)]).unwrap();
        assert!(c.cells().all(|c| !crosses(c.span, &[(1, 2)])));
        let root = c.cells().find(|c| c.span == (0, 3)).unwrap();
        assert_eq!(root.splits, [0, 2]);
    }

    fn atomic_strategy(n: usize) -> impl Strategy<Value = Vec<Span>> {
        proptest::collection::vec((0..n, 1usize..4), 0..4).prop_map(move |raw| {
            let mut out: Vec<Span> = Vec::new();
            for (a, len) in raw {
                let b = (a + len).min(n - 1);
                if b > a && out.iter().all(|&(x, y)| b < x || a > y) {
                    out.push((a, b));
                }
            }
            out
        })
    }

    proptest! {
        #[test]
        fn batches_track_pruning_tree_height(
            (v, atomic) in (2usize..40).prop_flat_map(|n| {
                (proptest::collection::vec(-3.0f64..3.0, n - 1), atomic_strategy(n))
            })
        ) {
            let s = MergeSchedule::build(&v, &atomic, 3).unwrap();
            let n = v.len() + 1;
            prop_assert_eq!(s.batches.len(), s.tree.height());
            prop_assert_eq!(s.levels.len(), s.tree.height());
            prop_assert!(s.internal_cells() <= 3 * n);
            prop_assert!(s.tree.respects(&atomic));
            let mut done: HashSet<Span> = (0..n).map(|i| (i, i)).collect();
            for level in &s.levels {
                for c in level {
                    prop_assert!(!c.splits.is_empty());
                    prop_assert!(!crosses(c.span, &atomic));
                    for &k in &c.splits {
                        prop_assert!(done.contains(&(c.span.0, k)));
                        prop_assert!(done.contains(&(k + 1, c.span.1)));
                    }
                }
                done.extend(level.iter().map(|c| c.span));
            }
            prop_assert!(done.contains(&(0, n - 1)));
            // Every node of the pruning tree survives, so its split is realizable.
            for (span, k) in s.tree.splits() {
                let cell = s.cells().find(|c| c.span == *span);
                prop_assert!(cell.is_some_and(|c| c.splits.contains(k)));
            }
        }
    }
}
