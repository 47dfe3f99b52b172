//! Boundary scorer that fixes the merge order of the pruned chart.

use rand::Rng;

use super::fns::CompositionConfig;
use crate::error::{Error, Result};
use crate::nn::{Block, Mlp, Norm};
use crate::numerics::{Backend, ParamId, ParamStore, Real};

#[derive(Clone, Debug)]
pub struct TopDownParser {
    pub pos: ParamId,
    pub blocks: Vec<Block>,
    pub ln: Norm,
    pub scorer: Mlp,
    pub max_len: usize,
}

impl TopDownParser {
    pub fn new<R: Real>(store: &mut ParamStore<R>, cfg: &CompositionConfig, rng: &mut impl Rng) -> Result<Self> {
        let d = cfg.width;
        let pos = store.add_normal("parser.pos", &[cfg.max_len, d], 0.1, rng)?;
        let blocks = (0..cfg.parser_layers)
            .map(|l| Block::new(store, &format!("parser.{l}"), d, cfg.heads, cfg.ffn, rng))
            .collect::<Result<Vec<_>>>()?;
        let ln = Norm::new(store, "parser.ln", d)?;
        let scorer = Mlp::new(store, "parser.score", 2 * d, cfg.ffn, 1, rng)?;
        Ok(TopDownParser { pos, blocks, ln, scorer, max_len: cfg.max_len })
    }

    /// One score per boundary between adjacent tokens, as `[n - 1, 1]`.
    /// `tokens` holds the `[n, width]` leaf vectors.
    pub fn scores<R: Real, B: Backend<R>>(&self, g: &mut B, tokens: &B::T) -> Result<B::T> {
        let n = g.value(tokens).rows();
        if n < 2 {
            return Err(Error::Chart(format!("boundary scores need at least 2 tokens, got {n}")));
        }
        if n > self.max_len {
            return Err(Error::Limit(format!("sentence of {n} tokens exceeds parser length {}", self.max_len)));
        }
        let pos: Vec<usize> = (0..n).collect();
        let p = g.embed(self.pos, &pos)?;
        let mut x = g.add(tokens, &p)?;
        for blk in &self.blocks {
            x = blk.forward(g, &x, 1, n, false)?;
        }
        let h = self.ln.forward(g, &x)?;
        let lo: Vec<usize> = (0..n - 1).collect();
        let hi: Vec<usize> = (1..n).collect();
        let a = g.select_rows(&h, &lo)?;
        let b = g.select_rows(&h, &hi)?;
        let pair = g.concat_cols(&[&a, &b])?;
        self.scorer.forward(g, &pair)
    }
}
