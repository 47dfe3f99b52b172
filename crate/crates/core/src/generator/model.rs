//! Type layers, token layers and the parallel training pass.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::actions::{Action, ActionSequence};
use crate::composition::{CompositionModel, InsideChart, Span};
use crate::corpus::vocab::{BOS, COMP, EOS, PAD};
use crate::error::{Error, Result};
use crate::nn::{Block, Mlp, Norm};
use crate::numerics::{Backend, ParamId, ParamStore, Real};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub width: usize,
    pub type_layers: usize,
    pub token_layers: usize,
    pub heads: usize,
    pub ffn: usize,
    pub max_words: usize,
    /// Feed chart inside vectors for completed constituents. When off, every
    /// constituent input is the COMP placeholder embedding.
    pub use_surrogate: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            width: 64,
            type_layers: 2,
            token_layers: 4,
            heads: 4,
            ffn: 256,
            max_words: 128,
            use_surrogate: true,
        }
    }
}

impl GeneratorConfig {
    /// Layer split of the small pre-training configuration.
    pub fn reference_small() -> Self {
        GeneratorConfig {
            width: 768,
            type_layers: 3,
            token_layers: 9,
            heads: 12,
            ffn: 3072,
            max_words: 1024,
            use_surrogate: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.type_layers == 0 || self.token_layers == 0 {
            return Err(Error::Config("type and token layer counts must be at least 1".into()));
        }
        if self.heads == 0 || !self.width.is_multiple_of(self.heads) {
            return Err(Error::Config(format!("width {} is not divisible by {} heads", self.width, self.heads)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Generator {
    pub cfg: GeneratorConfig,
    pub vocab_size: usize,
    pub embed: ParamId,
    pub type_pos: ParamId,
    pub token_pos: ParamId,
    pub type_blocks: Vec<Block>,
    pub type_ln: Norm,
    pub type_head: Mlp,
    pub token_blocks: Vec<Block>,
    pub token_ln: Norm,
    pub token_head: Mlp,
}

/// Log-probabilities from the parallel pass.
pub struct TrainOutput<T> {
    /// `[steps, 2]`, columns COMP and GEN.
    pub type_logp: T,
    /// `[gen steps, |V|]`.
    pub token_logp: T,
}

/// Allowed action types at a given stack depth: `[COMP, GEN]`.
pub fn type_mask(depth: usize) -> [bool; 2] {
    [depth >= 2, true]
}

/// Allowed tokens at a GEN step taken at the given stack depth.
pub fn token_mask(vocab_size: usize, depth: usize) -> Vec<bool> {
    (0..vocab_size).map(|x| !matches!(x, PAD | BOS | COMP) && (x != EOS || depth == 1)).collect()
}

impl Generator {
    pub fn new<R: Real>(
        store: &mut ParamStore<R>,
        cfg: &GeneratorConfig,
        vocab_size: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.width;
        let std = 1.0 / (d as f64).sqrt();
        let embed = store.add_normal("gen.embed", &[vocab_size, d], std, rng)?;
        let type_pos = store.add_normal("gen.type.pos", &[cfg.max_words + 1, d], std, rng)?;
        let token_pos = store.add_normal("gen.token.pos", &[cfg.max_words + 1, d], std, rng)?;
        let type_blocks = (0..cfg.type_layers)
            .map(|l| Block::new(store, &format!("gen.type.{l}"), d, cfg.heads, cfg.ffn, rng))
            .collect::<Result<Vec<_>>>()?;
        let type_ln = Norm::new(store, "gen.type.ln", d)?;
        let type_head = Mlp::new(store, "gen.type.head", d, cfg.ffn, 2, rng)?;
        let token_blocks = (0..cfg.token_layers)
            .map(|l| Block::new(store, &format!("gen.token.{l}"), d, cfg.heads, cfg.ffn, rng))
            .collect::<Result<Vec<_>>>()?;
        let token_ln = Norm::new(store, "gen.token.ln", d)?;
        let token_head = Mlp::new(store, "gen.token.head", d, cfg.ffn, vocab_size, rng)?;
        Ok(Generator {
            cfg: cfg.clone(),
            vocab_size,
            embed,
            type_pos,
            token_pos,
            type_blocks,
            type_ln,
            type_head,
            token_blocks,
            token_ln,
            token_head,
        })
    }

    /// Type-layer inputs from chart surrogates: position 0 is the sentinel,
    /// position `t` the node completed at step `t - 1`. `tokens` are the
    /// sentence ids.
    pub fn assemble_inputs<R: Real, B: Backend<R>>(
        &self,
        g: &mut B,
        comp: &CompositionModel,
        chart: &InsideChart<B::T>,
        seq: &ActionSequence,
        tokens: &[usize],
    ) -> Result<B::T> {
        let internal: Vec<Span> = seq.spans[..seq.len().saturating_sub(1)]
            .iter()
            .zip(&seq.actions)
            .filter(|(_, a)| **a == Action::Comp)
            .map(|(s, _)| s.expect("COMP has a span"))
            .collect();
        let surrogates = if self.cfg.use_surrogate && !internal.is_empty() {
            let c = chart.gather_inside(g, &internal)?;
            Some(comp.up.forward(g, &c)?)
        } else {
            None
        };
        self.assemble(g, seq, tokens, surrogates.as_ref())
    }

    /// Shared input assembly; `internal` holds one row per COMP action
    /// except a trailing one, in order.
    pub(crate) fn assemble<R: Real, B: Backend<R>>(
        &self,
        g: &mut B,
        seq: &ActionSequence,
        tokens: &[usize],
        internal: Option<&B::T>,
    ) -> Result<B::T> {
        let mut ids = vec![BOS];
        ids.extend_from_slice(tokens);
        ids.push(COMP);
        let table = g.embed(self.embed, &ids)?;
        let comp_row = ids.len() - 1;
        let mut src: Vec<(&B::T, usize)> = vec![(&table, 0)];
        let mut c = 0;
        for (a, span) in seq.actions[..seq.len().saturating_sub(1)].iter().zip(&seq.spans) {
            match a {
                Action::Gen(_) => {
                    let i = span.expect("word has a span").0;
                    if i >= tokens.len() {
                        return Err(Error::Chart(format!("action refers to word {i} of {}", tokens.len())));
                    }
                    src.push((&table, 1 + i));
                }
                Action::Comp => {
                    match internal {
                        Some(t) => src.push((t, c)),
                        None => src.push((&table, comp_row)),
                    }
                    c += 1;
                }
            }
        }
        g.gather(&src)
    }

    /// Runs both stacks over a whole action sequence in one pass.
    pub fn forward_train<R: Real, B: Backend<R>>(
        &self,
        g: &mut B,
        inputs: &B::T,
        seq: &ActionSequence,
    ) -> Result<TrainOutput<B::T>> {
        let steps = seq.len();
        if g.value(inputs).rows() != steps {
            return Err(Error::shape(
                "forward_train",
                format!("{} input rows for {} actions", g.value(inputs).rows(), steps),
            ));
        }
        let gens: Vec<usize> = (0..steps).filter(|&t| seq.actions[t].is_gen()).collect();
        if gens.len() > self.cfg.max_words + 1 || seq.words.last().is_some_and(|&w| w > self.cfg.max_words) {
            return Err(Error::Limit(format!("sentence exceeds {} words", self.cfg.max_words)));
        }
        let pos = g.embed(self.type_pos, &seq.words)?;
        let mut x = g.add(inputs, &pos)?;
        for blk in &self.type_blocks {
            x = blk.forward(g, &x, 1, steps, true)?;
        }
        let h = self.type_ln.forward(g, &x)?;
        let type_logits = self.type_head.forward(g, &h)?;
        let tmask: Vec<bool> = seq.depths.iter().flat_map(|&d| type_mask(d)).collect();
        let type_logp = g.log_softmax(&type_logits, Some(tmask))?;

        let vocab = self.vocab_size;
        let mut y = g.select_rows(&x, &gens)?;
        let wpos: Vec<usize> = (0..gens.len()).collect();
        let p = g.embed(self.token_pos, &wpos)?;
        y = g.add(&y, &p)?;
        for blk in &self.token_blocks {
            y = blk.forward(g, &y, 1, gens.len(), true)?;
        }
        let hy = self.token_ln.forward(g, &y)?;
        let token_logits = self.token_head.forward(g, &hy)?;
        let xmask: Vec<bool> = gens.iter().flat_map(|&t| token_mask(vocab, seq.depths[t])).collect();
        let token_logp = g.log_softmax(&token_logits, Some(xmask))?;
        Ok(TrainOutput { type_logp, token_logp })
    }
}

/// Mean negative log-probability per action. GEN steps contribute the type
/// and token terms, COMP steps the type term.
pub fn loss_ar<R: Real, B: Backend<R>>(g: &mut B, out: &TrainOutput<B::T>, seq: &ActionSequence) -> Result<B::T> {
    let types: Vec<usize> = seq.actions.iter().map(|a| usize::from(a.is_gen())).collect();
    let targets: Vec<usize> = seq
        .actions
        .iter()
        .filter_map(|a| match a {
            Action::Gen(x) => Some(*x),
            Action::Comp => None,
        })
        .collect();
    let a = g.pick(&out.type_logp, &types)?;
    let b = g.pick(&out.token_logp, &targets)?;
    let sa = g.sum_all(&a)?;
    let sb = g.sum_all(&b)?;
    let s = g.add(&sa, &sb)?;
    g.scale(&s, -1.0 / seq.len() as f64)
}
