//! Parsing, generation and surprisal on top of the beam steps.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::beam::{action_beam_step, log_sum, next_forced, word_beam_step, Hypothesis, TokenChoice};
use crate::composition::BinaryTree;
use crate::corpus::vocab::EOS;
use crate::error::{Error, Result};
use crate::generator::{Action, ActionSequence};
use crate::model::Gpst;
use crate::numerics::{ParamStore, Real};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BeamMode {
    /// Hypotheses are compared only after equal numbers of words.
    Word,
    /// Plain action-level beam, the ablation.
    Action,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    pub beam: usize,
    /// GEN fan-out per hypothesis in open generation.
    pub top_m: usize,
    pub mode: BeamMode,
    pub max_words: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig { beam: 50, top_m: 50, mode: BeamMode::Word, max_words: 40 }
    }
}

#[derive(Clone, Debug)]
pub struct ParseResult {
    pub tree: BinaryTree,
    pub actions: Vec<Action>,
    /// Joint log-probability of the sentence and `tree`, end token included.
    pub logp: f64,
    /// `prefix_logp[t]` approximates log p(x_1..x_t) by summing the beam
    /// after the `t`-th word; entry 0 is 0. Empty in action-level mode.
    pub prefix_logp: Vec<f64>,
    /// Beam estimate of log p(x), end token included.
    pub sentence_logp: f64,
}

/// Constrained decoding of a given sentence.
pub fn parse<R: Real>(store: &ParamStore<R>, model: &Gpst, tokens: &[usize], cfg: &DecodeConfig) -> Result<ParseResult> {
    if tokens.is_empty() {
        return Err(Error::InvalidAction("cannot parse an empty sentence".into()));
    }
    if let Some(&x) = tokens.iter().find(|&&x| x >= model.cfg.vocab_size || x == EOS) {
        return Err(Error::InvalidAction(format!("token {x} cannot be generated")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let start = Hypothesis::start(store, model)?;
    let (beam, prefix) = match cfg.mode {
        BeamMode::Word => {
            let mut beam = vec![start];
            let mut prefix = vec![0.0];
            for &x in tokens.iter().chain(std::iter::once(&EOS)) {
                beam = word_beam_step(store, model, beam, cfg.beam, TokenChoice::Forced(x), &mut rng)?;
                prefix.push(log_sum(&beam));
            }
            prefix.pop();
            (beam, prefix)
        }
        BeamMode::Action => {
            let mut beam = vec![start];
            while !beam.iter().all(|h| h.finished()) {
                beam = action_beam_step(store, model, beam, cfg.beam, |h| next_forced(tokens, h.words()), &mut rng)?;
            }
            (beam, Vec::new())
        }
    };
    let best = beam.first().ok_or(Error::EmptyBeam)?;
    let seq = ActionSequence::new(best.actions.clone())?;
    Ok(ParseResult {
        tree: seq.tree()?,
        actions: best.actions.clone(),
        logp: best.logp,
        prefix_logp: prefix,
        sentence_logp: log_sum(&beam),
    })
}

/// Surprisal in bits of words `s..=e` (1-based) given the words before
/// them, from a table of prefix log-probabilities.
pub fn surprisal(prefix_logp: &[f64], s: usize, e: usize) -> Result<f64> {
    let n = prefix_logp.len().saturating_sub(1);
    if s < 1 || s > e || e > n {
        return Err(Error::InvalidAction(format!("region ({s}, {e}) outside a {n}-word sentence")));
    }
    let bits = (prefix_logp[s - 1] - prefix_logp[e]) / std::f64::consts::LN_2;
    if bits.is_nan() {
        // Both prefixes fell off the beam.
        return Ok(f64::INFINITY);
    }
    Ok(bits)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GenMode {
    Beam,
    /// Top-`k` sampling of words with a fixed seed.
    Sample { k: usize, seed: u64 },
}

#[derive(Clone, Debug)]
pub struct Generation {
    /// Prompt plus generated words, end token excluded.
    pub tokens: Vec<usize>,
    pub actions: Vec<Action>,
    /// The completed tree, or `None` when nothing was generated or the
    /// output was cut off with more than one open constituent.
    pub tree: Option<BinaryTree>,
    pub logp: f64,
    /// Stopped at the word limit without an end token.
    pub truncated: bool,
}

pub fn generate<R: Real>(
    store: &ParamStore<R>,
    model: &Gpst,
    prompt: &[usize],
    cfg: &DecodeConfig,
    mode: GenMode,
) -> Result<Generation> {
    if prompt.len() > cfg.max_words {
        return Err(Error::Limit(format!("prompt of {} words exceeds the limit {}", prompt.len(), cfg.max_words)));
    }
    let (choice, seed) = match mode {
        GenMode::Beam => (TokenChoice::TopM(cfg.top_m), 0),
        GenMode::Sample { k, seed } => (TokenChoice::Sample(k), seed),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut beam = vec![Hypothesis::start(store, model)?];
    let mut complete: Vec<Hypothesis<R>> = Vec::new();
    for &x in prompt {
        beam = word_beam_step(store, model, beam, cfg.beam, TokenChoice::Forced(x), &mut rng)?;
    }
    let mut words = prompt.len();
    while !beam.is_empty() && words < cfg.max_words {
        beam = word_beam_step(store, model, beam, cfg.beam, choice, &mut rng)?;
        words += 1;
        let (done, open): (Vec<_>, Vec<_>) = beam.into_iter().partition(|h| h.finished());
        complete.extend(done);
        beam = open;
        // Scores only fall as actions are added.
        let best_done = complete.iter().map(|h| h.logp).fold(f64::NEG_INFINITY, f64::max);
        if beam.first().is_none_or(|h| h.logp <= best_done) {
            break;
        }
    }
    // A sentence that fills the word limit may still close with the end token.
    if !beam.is_empty() && words == cfg.max_words {
        if let Ok(b) = word_beam_step(store, model, beam.clone(), cfg.beam, TokenChoice::Forced(EOS), &mut rng) {
            complete.extend(b.into_iter().filter(|h| h.finished()));
        }
    }
    complete.sort_by(|a, b| b.logp.total_cmp(&a.logp).then(a.actions.len().cmp(&b.actions.len())));
    if let Some(best) = complete.into_iter().next() {
        let seq = ActionSequence::new(best.actions.clone())?;
        return Ok(Generation { tokens: seq.tokens(), tree: Some(seq.tree()?), actions: best.actions, logp: best.logp, truncated: false });
    }
    let best = beam.into_iter().next().unwrap_or(Hypothesis::start(store, model)?);
    let seq = ActionSequence::new(best.actions.clone())?;
    let tree = if best.state.depth() == 1 { Some(seq.tree()?) } else { None };
    Ok(Generation { tokens: seq.tokens(), tree, actions: best.actions, logp: best.logp, truncated: words > 0 })
}
