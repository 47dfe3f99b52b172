//! Unlabeled binary trees over token positions.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};

/// True when `span` partially overlaps one of the `atomic` spans.
pub fn crosses(span: (usize, usize), atomic: &[(usize, usize)]) -> bool {
    let (i, j) = span;
    atomic.iter().any(|&(a, b)| (i < a && a <= j && j < b) || (a < i && i <= b && b < j))
}

/// A full binary tree over `n` tokens, stored as the split point of every
/// internal span. A split `k` of span `(i, j)` yields children `(i, k)` and
/// `(k + 1, j)`. Spans are 0-based and inclusive.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BinaryTree {
    n: usize,
    splits: BTreeMap<(usize, usize), usize>,
}

impl BinaryTree {
    pub fn from_splits(n: usize, splits: BTreeMap<(usize, usize), usize>) -> Result<Self> {
        let t = BinaryTree { n, splits };
        t.validate()?;
        Ok(t)
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Chart("a tree needs at least one token".into()));
        }
        if self.splits.len() != self.n - 1 {
            return Err(Error::Chart(format!("{} internal nodes for {} tokens", self.splits.len(), self.n)));
        }
        let mut stack = vec![(0, self.n - 1)];
        let mut seen = 0;
        while let Some((i, j)) = stack.pop() {
            if i == j {
                continue;
            }
            let k = *self
                .splits
                .get(&(i, j))
                .ok_or_else(|| Error::Chart(format!("span ({i}, {j}) has no split")))?;
            if k < i || k >= j {
                return Err(Error::Chart(format!("split {k} outside span ({i}, {j})")));
            }
            seen += 1;
            stack.push((k + 1, j));
            stack.push((i, k));
        }
        if seen != self.splits.len() {
            return Err(Error::Chart("splits contain unreachable spans".into()));
        }
        Ok(())
    }

    pub fn leaf() -> Self {
        BinaryTree { n: 1, splits: BTreeMap::new() }
    }

    pub fn right_branching(n: usize) -> Self {
        BinaryTree { n, splits: (0..n.saturating_sub(1)).map(|i| ((i, n - 1), i)).collect() }
    }

    pub fn left_branching(n: usize) -> Self {
        BinaryTree { n, splits: (1..n).map(|j| ((0, j), j - 1)).collect() }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn split(&self, span: (usize, usize)) -> Option<usize> {
        self.splits.get(&span).copied()
    }

    pub fn splits(&self) -> &BTreeMap<(usize, usize), usize> {
        &self.splits
    }

    pub fn internal_spans(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.splits.keys().copied()
    }

    /// Every node span, leaves included.
    pub fn spans(&self) -> BTreeSet<(usize, usize)> {
        let mut s: BTreeSet<_> = self.splits.keys().copied().collect();
        s.extend((0..self.n).map(|i| (i, i)));
        s
    }

    /// Node spans in left-child-first post-order.
    pub fn postorder(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(2 * self.n - 1);
        let mut stack = vec![((0, self.n - 1), false)];
        while let Some((span, expanded)) = stack.pop() {
            match self.split(span) {
                Some(k) if !expanded => {
                    stack.push((span, true));
                    stack.push(((k + 1, span.1), false));
                    stack.push(((span.0, k), false));
                }
                _ => out.push(span),
            }
        }
        out
    }

    /// Number of edges on the longest root-to-leaf path.
    pub fn height(&self) -> usize {
        self.node_height((0, self.n - 1))
    }

    pub fn node_height(&self, span: (usize, usize)) -> usize {
        let mut h: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        for s in self.postorder() {
            let v = match self.split(s) {
                Some(k) => 1 + h[&(s.0, k)].max(h[&(k + 1, s.1)]),
                None => 0,
            };
            h.insert(s, v);
        }
        h.get(&span).copied().unwrap_or(0)
    }

    /// True when every atomic span is a constituent, i.e. no node partially
    /// overlaps one.
    pub fn respects(&self, atomic: &[(usize, usize)]) -> bool {
        self.splits.keys().all(|&s| !crosses(s, atomic))
    }

    pub fn to_bracketed<S: AsRef<str>>(&self, tokens: &[S]) -> String {
        self.render(tokens, None)
    }

    /// Like [`BinaryTree::to_bracketed`] but every internal node carries
    /// `label`, so the output reads back with the treebank parser.
    pub fn to_labeled<S: AsRef<str>>(&self, tokens: &[S], label: &str) -> String {
        self.render(tokens, Some(label))
    }

    fn render<S: AsRef<str>>(&self, tokens: &[S], label: Option<&str>) -> String {
        fn open(out: &mut String, label: Option<&str>) {
            out.push('(');
            if let Some(l) = label {
                out.push_str(l);
                out.push(' ');
            }
        }
        fn go<S: AsRef<str>>(t: &BinaryTree, tokens: &[S], span: (usize, usize), label: Option<&str>, out: &mut String) {
            match t.split(span) {
                None => out.push_str(tokens.get(span.0).map_or("_", |s| s.as_ref())),
                Some(k) => {
                    open(out, label);
                    go(t, tokens, (span.0, k), label, out);
                    out.push(' ');
                    go(t, tokens, (k + 1, span.1), label, out);
                    out.push(')');
                }
            }
        }
        let mut out = String::new();
        if self.n == 1 {
            open(&mut out, label);
            out.push_str(tokens.first().map_or("_", |s| s.as_ref()));
            out.push(')');
        } else {
            go(self, tokens, (0, self.n - 1), label, &mut out);
        }
        out
    }

    /// A random tree: every span is split at a uniformly chosen boundary.
    pub fn random(n: usize, rng: &mut impl rand::Rng) -> Self {
        let mut splits = BTreeMap::new();
        let mut stack = vec![(0, n.saturating_sub(1))];
        while let Some((i, j)) = stack.pop() {
            if i < j {
                let k = rng.random_range(i..j);
                splits.insert((i, j), k);
                stack.push((i, k));
                stack.push((k + 1, j));
            }
        }
        BinaryTree { n, splits }
    }

    /// All binary trees over `n` tokens (Catalan(n - 1) of them).
    pub fn enumerate(n: usize) -> Vec<BinaryTree> {
        fn go(i: usize, j: usize) -> Vec<BTreeMap<(usize, usize), usize>> {
            if i == j {
                return vec![BTreeMap::new()];
            }
            let mut out = Vec::new();
            for k in i..j {
                for l in go(i, k) {
                    for r in go(k + 1, j) {
                        let mut m = l.clone();
                        m.extend(r);
                        m.insert((i, j), k);
                        out.push(m);
                    }
                }
            }
            out
        }
        if n == 0 {
            return Vec::new();
        }
        go(0, n - 1).into_iter().map(|splits| BinaryTree { n, splits }).collect()
    }
}
