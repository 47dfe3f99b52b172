//! Brute-force references for the chart and the decoder. These are slow on
//! purpose and share no code with the batched implementations beyond the
//! composition functions and the generator's parallel pass.

use std::collections::BTreeMap;

use crate::composition::{BinaryTree, CompositionModel, Span};
use crate::error::{Error, Result};
use crate::generator::{linearize_postorder, Action, ActionSequence};
use crate::model::Gpst;
use crate::numerics::{Backend, Eager, ParamStore, Real, Tensor};

pub const MAX_ORACLE_INSIDE: usize = 8;
pub const MAX_ORACLE_ACTIONS: usize = 5;

fn crossing(i: usize, j: usize, atomic: &[Span]) -> bool {
    atomic.iter().any(|&(a, b)| (i < a && a <= j && j < b) || (a < i && i <= b && b < j))
}

fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

fn row(v: &[f64]) -> Tensor<f64> {
    Tensor::row(v.to_vec())
}

/// Inside vector and weighted height of one span.
#[derive(Clone, Debug)]
pub struct OracleCell {
    pub inside: Vec<f64>,
    pub height: f64,
}

struct Oracle<'a, 's> {
    g: Eager<'s, f64>,
    comp: &'a CompositionModel,
    leaves: Tensor<f64>,
    atomic: Vec<Span>,
}

impl Oracle<'_, '_> {
    /// Plain recursion over all valid splits, recomputing subspans.
    fn inside(&mut self, i: usize, j: usize) -> Result<OracleCell> {
        if i == j {
            return Ok(OracleCell { inside: self.leaves.row_slice(i).to_vec(), height: 0.0 });
        }
        let mut composed = Vec::new();
        let mut scores = Vec::new();
        let mut heights = Vec::new();
        for k in i..j {
            if crossing(i, k, &self.atomic) || crossing(k + 1, j, &self.atomic) {
                continue;
            }
            let l = self.inside(i, k)?;
            let r = self.inside(k + 1, j)?;
            let (lt, rt) = (self.g.constant(row(&l.inside)), self.g.constant(row(&r.inside)));
            composed.push(self.comp.compose(&mut self.g, &lt, &rt)?.data().to_vec());
            scores.push(self.comp.score_alpha(&mut self.g, &lt, &rt)?.item());
            heights.push(l.height.max(r.height) + 1.0);
        }
        if scores.is_empty() {
            return Err(Error::Chart(format!("span ({i}, {j}) has no valid split")));
        }
        let w = softmax(&scores);
        let d = composed[0].len();
        let inside = (0..d).map(|c| w.iter().zip(&composed).map(|(w, v)| w * v[c]).sum()).collect();
        let height = w.iter().zip(&heights).map(|(w, h)| w * h).sum();
        Ok(OracleCell { inside, height })
    }
}

/// Inside values of every valid span, each computed by independent
/// recursion from the leaves.
pub fn oracle_inside(
    store: &ParamStore<f64>,
    comp: &CompositionModel,
    leaves: &Tensor<f64>,
    atomic: &[Span],
) -> Result<BTreeMap<Span, OracleCell>> {
    let n = leaves.rows();
    if n == 0 || n > MAX_ORACLE_INSIDE {
        return Err(Error::Limit(format!("oracle handles 1..={MAX_ORACLE_INSIDE} tokens, got {n}")));
    }
    let mut o = Oracle { g: Eager::new(store), comp, leaves: leaves.clone(), atomic: atomic.to_vec() };
    let mut out = BTreeMap::new();
    for i in 0..n {
        for j in i..n {
            if !crossing(i, j, atomic) {
                out.insert((i, j), o.inside(i, j)?);
            }
        }
    }
    Ok(out)
}

/// Outside vectors of every valid span, by recursion from the root over
/// all (parent, sibling) pairs.
pub fn oracle_outside(
    store: &ParamStore<f64>,
    comp: &CompositionModel,
    inside: &BTreeMap<Span, OracleCell>,
    n: usize,
) -> Result<BTreeMap<Span, Vec<f64>>> {
    let mut g = Eager::new(store);
    let mut memo: BTreeMap<Span, Vec<f64>> = BTreeMap::new();
    fn go(
        g: &mut Eager<'_, f64>,
        comp: &CompositionModel,
        inside: &BTreeMap<Span, OracleCell>,
        n: usize,
        span: Span,
        memo: &mut BTreeMap<Span, Vec<f64>>,
    ) -> Result<Vec<f64>> {
        if let Some(v) = memo.get(&span) {
            return Ok(v.clone());
        }
        let (i, j) = span;
        let v = if span == (0, n - 1) {
            g.param(comp.root).data().to_vec()
        } else {
            // (parent, sibling, sibling is right)
            let mut pairs = Vec::new();
            for m in j + 1..n {
                if inside.contains_key(&(i, m)) && inside.contains_key(&(j + 1, m)) {
                    pairs.push(((i, m), (j + 1, m), true));
                }
            }
            for m in 0..i {
                if inside.contains_key(&(m, j)) && inside.contains_key(&(m, i - 1)) {
                    pairs.push(((m, j), (m, i - 1), false));
                }
            }
            let mut dec = Vec::new();
            let mut scores = Vec::new();
            for (p, s, right) in pairs {
                let po = go(g, comp, inside, n, p, memo)?;
                let pt = g.constant(row(&po));
                let st = g.constant(row(&inside[&s].inside));
                dec.push(comp.decompose(g, &pt, &st, &[right])?.data().to_vec());
                scores.push(comp.score_beta(g, &pt, &st, &[right])?.item());
            }
            if scores.is_empty() {
                return Err(Error::Chart(format!("span {span:?} has no parent")));
            }
            let w = softmax(&scores);
            (0..dec[0].len()).map(|c| w.iter().zip(&dec).map(|(w, v)| w * v[c]).sum()).collect()
        };
        memo.insert(span, v.clone());
        Ok(v)
    }
    for &s in inside.keys() {
        go(&mut g, comp, inside, n, s, &mut memo)?;
    }
    Ok(memo)
}

/// Joint log-probability of an action sequence from one parallel pass.
pub fn sequence_logp<R: Real>(store: &ParamStore<R>, model: &Gpst, seq: &ActionSequence) -> Result<f64> {
    let mut g = Eager::new(store);
    let x = model.hard_inputs(&mut g, seq)?;
    let out = model.gen.forward_train(&mut g, &x, seq)?;
    let mut total = 0.0;
    let mut gi = 0;
    for (t, a) in seq.actions.iter().enumerate() {
        match a {
            Action::Comp => total += out.type_logp.row_slice(t)[0].f64(),
            Action::Gen(x) => {
                total += out.type_logp.row_slice(t)[1].f64() + out.token_logp.row_slice(gi)[*x].f64();
                gi += 1;
            }
        }
    }
    Ok(total)
}

#[derive(Clone, Debug)]
pub struct Enumeration {
    /// Every binary tree with its joint log-probability, end token included.
    pub trees: Vec<(BinaryTree, f64)>,
    pub best: BinaryTree,
    pub best_logp: f64,
    /// Exact log p(x_1..x_t) for t = 0..=n.
    pub prefix_logp: Vec<f64>,
    /// Exact log p(x) summed over all trees.
    pub sentence_logp: f64,
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Every valid action prefix that generates exactly `t` words and ends
/// with the `t`-th GEN.
fn prefixes(tokens: &[usize], t: usize) -> Vec<Vec<Action>> {
    fn go(tokens: &[usize], t: usize, acts: &mut Vec<Action>, depth: usize, w: usize, out: &mut Vec<Vec<Action>>) {
        if w == t {
            out.push(acts.clone());
            return;
        }
        if depth >= 2 {
            acts.push(Action::Comp);
            go(tokens, t, acts, depth - 1, w, out);
            acts.pop();
        }
        acts.push(Action::Gen(tokens[w]));
        go(tokens, t, acts, depth + 1, w + 1, out);
        acts.pop();
    }
    let mut out = Vec::new();
    go(tokens, t, &mut Vec::new(), 0, 0, &mut out);
    out
}

/// Exhaustive scoring of all trees and all structural prefixes of a short
/// sentence.
pub fn oracle_enumerate_actions<R: Real>(store: &ParamStore<R>, model: &Gpst, tokens: &[usize]) -> Result<Enumeration> {
    let n = tokens.len();
    if n == 0 || n > MAX_ORACLE_ACTIONS {
        return Err(Error::Limit(format!("enumeration handles 1..={MAX_ORACLE_ACTIONS} words, got {n}")));
    }
    let mut trees = Vec::new();
    for t in BinaryTree::enumerate(n) {
        let seq = linearize_postorder(&t, tokens)?.with_eos()?;
        let lp = sequence_logp(store, model, &seq)?;
        trees.push((t, lp));
    }
    // First maximum in enumeration order.
    let (best, best_logp) = trees
        .iter()
        .fold(None::<&(BinaryTree, f64)>, |acc, x| match acc {
            Some(a) if a.1 >= x.1 => Some(a),
            _ => Some(x),
        })
        .map(|(t, l)| (t.clone(), *l))
        .expect("at least one tree");
    let mut prefix_logp = vec![0.0];
    for t in 1..=n {
        let lps = prefixes(tokens, t)
            .into_iter()
            .map(|a| sequence_logp(store, model, &ActionSequence::new(a)?))
            .collect::<Result<Vec<_>>>()?;
        prefix_logp.push(log_sum_exp(&lps));
    }
    let sentence_logp = log_sum_exp(&trees.iter().map(|t| t.1).collect::<Vec<_>>());
    Ok(Enumeration { trees, best, best_logp, prefix_logp, sentence_logp })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prefix_counts() {
        // After two words the stack is either two leaves or one node.
        assert_eq!(prefixes(&[5, 6], 2).len(), 1);
        assert_eq!(prefixes(&[5, 6, 7], 3).len(), 2);
        // Prefixes ending in the fourth word: trees over the first three,
        // with any suffix of open nodes.
        assert_eq!(prefixes(&[5, 6, 7, 8], 4).len(), 5);
    }
}
