//! The full model: composition model plus generator, sharing one token
//! embedding table.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::composition::{CompositionConfig, CompositionModel};
use crate::error::{Error, Result};
use crate::generator::{Action, ActionSequence, GenState, Generator, GeneratorConfig};
use crate::numerics::{Backend, ParamStore, Real};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[derive(Default)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub generator: GeneratorConfig,
    pub composition: CompositionConfig,
}


impl ModelConfig {
    /// Small dimensions for tests and gradient checks.
    pub fn tiny(vocab_size: usize) -> Self {
        ModelConfig {
            vocab_size,
            generator: GeneratorConfig { width: 16, type_layers: 1, token_layers: 1, heads: 2, ffn: 32, max_words: 32, use_surrogate: true },
            composition: CompositionConfig { width: 16, layers: 1, heads: 2, ffn: 32, score_dim: 16, parser_layers: 1, window: 3, max_len: 32 },
        }
    }
}

#[derive(Clone, Debug)]
pub struct Gpst {
    pub cfg: ModelConfig,
    pub gen: Generator,
    pub comp: CompositionModel,
}

impl Gpst {
    pub fn new<R: Real>(store: &mut ParamStore<R>, cfg: &ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        if cfg.vocab_size <= crate::corpus::vocab::COMP {
            return Err(Error::Config(format!("vocabulary of {} has no room for words", cfg.vocab_size)));
        }
        let gen = Generator::new(store, &cfg.generator, cfg.vocab_size, rng)?;
        let comp = CompositionModel::new(store, &cfg.composition, cfg.generator.width, rng)?;
        Ok(Gpst { cfg: cfg.clone(), gen, comp })
    }

    /// Leaf inside vectors: down-projected token embeddings, `[n, width]`.
    pub fn leaves<R: Real, B: Backend<R>>(&self, g: &mut B, ids: &[usize]) -> Result<B::T> {
        let e = g.embed(self.gen.embed, ids)?;
        self.comp.down.forward(g, &e)
    }

    /// Down-projected embedding table, `[|V|, width]`.
    pub fn output_embeddings<R: Real, B: Backend<R>>(&self, g: &mut B) -> Result<B::T> {
        let e = g.param(self.gen.embed);
        self.comp.down.forward(g, &e)
    }

    /// Type-layer inputs built by composing constituents one at a time
    /// along the actions, exactly as incremental decoding does.
    pub fn hard_inputs<R: Real, B: Backend<R>>(&self, g: &mut B, seq: &ActionSequence) -> Result<B::T> {
        let tokens = seq.tokens();
        let internal = if self.gen.cfg.use_surrogate {
            let leaves = self.leaves(g, &tokens)?;
            let mut stack: Vec<B::T> = Vec::new();
            let mut rows: Vec<B::T> = Vec::new();
            for (t, (a, span)) in seq.actions.iter().zip(&seq.spans).enumerate() {
                match a {
                    Action::Comp => {
                        let r = stack.pop().ok_or_else(|| Error::InvalidAction("COMP on empty stack".into()))?;
                        let l = stack.pop().ok_or_else(|| Error::InvalidAction("COMP on empty stack".into()))?;
                        let c = self.comp.compose(g, &l, &r)?;
                        if t + 1 < seq.len() {
                            rows.push(self.comp.up.forward(g, &c)?);
                        }
                        stack.push(c);
                    }
                    Action::Gen(_) => {
                        if let Some((i, _)) = span {
                            stack.push(g.select_rows(&leaves, &[*i])?);
                        }
                    }
                }
            }
            if rows.is_empty() {
                None
            } else {
                let src: Vec<(&B::T, usize)> = rows.iter().map(|r| (r, 0)).collect();
                Some(g.gather(&src)?)
            }
        } else {
            None
        };
        self.gen.assemble(g, seq, &tokens, internal.as_ref())
    }

    /// Per-step log-probabilities from teacher-forced incremental decoding.
    pub fn replay<R: Real>(&self, store: &ParamStore<R>, seq: &ActionSequence) -> Result<Vec<f64>> {
        let mut st: GenState<R> = self.gen.start(store)?;
        let mut out = Vec::with_capacity(seq.len());
        for &a in &seq.actions {
            out.push(self.gen.action_logp(store, &mut st, a)?);
            st = self.gen.apply(store, &self.comp, &st, a)?;
        }
        Ok(out)
    }
}
