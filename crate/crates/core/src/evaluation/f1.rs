//! Unlabeled bracketing F1.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::composition::{BinaryTree, Span};
use crate::corpus::trees::{GoldTree, DEFAULT_PUNCT_TAGS};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct F1Config {
    /// Lowercase words before they reach the model.
    pub lowercase: bool,
    /// POS tags whose tokens are dropped before scoring.
    pub punct_tags: Vec<String>,
    /// Ignore single-token spans and the whole-sentence span.
    pub exclude_trivial: bool,
}

impl Default for F1Config {
    fn default() -> Self {
        F1Config {
            lowercase: true,
            punct_tags: DEFAULT_PUNCT_TAGS.iter().map(|s| s.to_string()).collect(),
            exclude_trivial: true,
        }
    }
}

/// Re-indexes spans onto the tokens with `keep[i]` set. Spans left empty
/// vanish and spans that collapse onto the same range merge.
pub fn remove_tokens(spans: &BTreeSet<Span>, keep: &[bool]) -> Result<BTreeSet<Span>> {
    let mut new_index = Vec::with_capacity(keep.len());
    let mut c = 0;
    for &k in keep {
        new_index.push(c);
        if k {
            c += 1;
        }
    }
    let mut out = BTreeSet::new();
    for &(i, j) in spans {
        if i > j || j >= keep.len() {
            return Err(Error::InvalidAction(format!("span ({i}, {j}) outside {} tokens", keep.len())));
        }
        let kept: Vec<usize> = (i..=j).filter(|&t| keep[t]).collect();
        if let (Some(&a), Some(&b)) = (kept.first(), kept.last()) {
            out.insert((new_index[a], new_index[b]));
        }
    }
    Ok(out)
}

/// Maps spans over word pieces onto word indices.
pub fn to_word_spans(spans: &BTreeSet<Span>, word_of: &[usize]) -> Result<BTreeSet<Span>> {
    spans
        .iter()
        .map(|&(i, j)| match (word_of.get(i), word_of.get(j)) {
            (Some(&a), Some(&b)) => Ok((a, b)),
            _ => Err(Error::InvalidAction(format!("span ({i}, {j}) outside {} pieces", word_of.len()))),
        })
        .collect()
}

/// The word-level tree of a piece-level tree that keeps every word's pieces
/// together.
pub fn collapse_pieces(tree: &BinaryTree, word_of: &[usize]) -> Result<BinaryTree> {
    if tree.len() != word_of.len() {
        return Err(Error::InvalidAction(format!("tree over {} tokens, {} word indices", tree.len(), word_of.len())));
    }
    let words = word_of.last().map_or(0, |w| w + 1);
    let mut splits = BTreeMap::new();
    for (&(i, j), &k) in tree.splits() {
        let (a, b) = (word_of[i], word_of[j]);
        if a == b {
            continue;
        }
        if word_of[k] == word_of[k + 1] {
            return Err(Error::InvalidAction(format!("span ({i}, {j}) splits word {}", word_of[k])));
        }
        splits.insert((a, b), word_of[k]);
    }
    BinaryTree::from_splits(words, splits)
}

fn scored(spans: &BTreeSet<Span>, n: usize, cfg: &F1Config) -> Result<BTreeSet<Span>> {
    let mut out = BTreeSet::new();
    for &(i, j) in spans {
        if i > j || j >= n {
            return Err(Error::InvalidAction(format!("span ({i}, {j}) outside {n} tokens")));
        }
        if cfg.exclude_trivial && (i == j || (i == 0 && j + 1 == n)) {
            continue;
        }
        out.insert((i, j));
    }
    Ok(out)
}

/// F1 of two span sets over the same `n` tokens. Two empty sets score 1,
/// one empty set 0.
pub fn sentence_f1(pred: &BTreeSet<Span>, gold: &BTreeSet<Span>, n: usize, cfg: &F1Config) -> Result<f64> {
    let p = scored(pred, n, cfg)?;
    let g = scored(gold, n, cfg)?;
    if p.is_empty() && g.is_empty() {
        return Ok(1.0);
    }
    if p.is_empty() || g.is_empty() {
        return Ok(0.0);
    }
    let hit = p.intersection(&g).count() as f64;
    if hit == 0.0 {
        return Ok(0.0);
    }
    let prec = hit / p.len() as f64;
    let rec = hit / g.len() as f64;
    Ok(2.0 * prec * rec / (prec + rec))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LengthBucket {
    pub sentences: usize,
    pub mean_f1: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusF1 {
    pub mean_f1: f64,
    pub sentences: usize,
    /// Sentences with fewer than two tokens after punctuation removal.
    pub skipped: usize,
    /// Keyed by the first length of each ten-wide bucket (1, 11, 21, ...).
    pub by_length: BTreeMap<usize, LengthBucket>,
}

/// Mean sentence F1 of predicted span sets against gold trees. Predictions
/// are indexed like the gold tokens, punctuation included.
pub fn corpus_f1(pred: &[BTreeSet<Span>], gold: &[GoldTree], cfg: &F1Config) -> Result<CorpusF1> {
    if pred.len() != gold.len() {
        return Err(Error::InvalidAction(format!("{} predictions for {} gold trees", pred.len(), gold.len())));
    }
    let mut out = CorpusF1::default();
    let mut total = 0.0;
    for (p, g) in pred.iter().zip(gold) {
        let keep: Vec<bool> = g.punct.iter().map(|&x| !x).collect();
        let n = keep.iter().filter(|&&k| k).count();
        if n < 2 {
            out.skipped += 1;
            continue;
        }
        let p = remove_tokens(p, &keep)?;
        let gs = remove_tokens(&g.spans, &keep)?;
        let f = sentence_f1(&p, &gs, n, cfg)?;
        total += f;
        out.sentences += 1;
        let b = out.by_length.entry((n - 1) / 10 * 10 + 1).or_default();
        b.mean_f1 += f;
        b.sentences += 1;
    }
    for b in out.by_length.values_mut() {
        b.mean_f1 /= b.sentences as f64;
    }
    out.mean_f1 = if out.sentences > 0 { total / out.sentences as f64 } else { 0.0 };
    Ok(out)
}

/// Spans of a binary tree, leaves and root included.
pub fn tree_spans(tree: &BinaryTree) -> BTreeSet<Span> {
    tree.spans().into_iter().collect()
}

/// Baseline span sets over `n` tokens.
pub fn right_branching_spans(n: usize) -> BTreeSet<Span> {
    tree_spans(&BinaryTree::right_branching(n))
}

pub fn left_branching_spans(n: usize) -> BTreeSet<Span> {
    tree_spans(&BinaryTree::left_branching(n))
}
