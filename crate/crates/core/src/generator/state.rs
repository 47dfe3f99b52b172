//! Incremental decoding state. States are immutable values: applying an
//! action returns a new state that shares the attention caches of its
//! parent.

use std::sync::Arc;

use super::actions::Action;
use super::model::{token_mask, type_mask, Generator};
use crate::composition::{CompositionModel, Span};
use crate::corpus::vocab::{BOS, COMP, EOS};
use crate::error::{Error, Result};
use crate::nn::KvCache;
use crate::numerics::{ops, Backend, Eager, ParamStore, Real, Tensor};

#[derive(Clone, Debug)]
pub struct StackItem<R> {
    /// Composition-width vector used when this node is composed.
    pub comp: Arc<Tensor<R>>,
    /// Generator-width vector fed to the type layers.
    pub input: Arc<Tensor<R>>,
    pub span: Span,
}

#[derive(Clone, Debug)]
pub struct GenState<R> {
    type_caches: Vec<KvCache<R>>,
    token_caches: Vec<KvCache<R>>,
    /// Constituents above the sentinel, top last.
    pub stack: Vec<StackItem<R>>,
    pub words: usize,
    pub steps: usize,
    pub finished: bool,
    /// Type-layer stream at the current step, fed to the token layers.
    h: Arc<Tensor<R>>,
    type_logp: [f64; 2],
    token: Option<(Arc<Vec<f64>>, Vec<KvCache<R>>)>,
}

impl<R: Real> GenState<R> {
    pub fn depth(&self) -> usize {
        self.stack.len()
    }

    /// `[log p(COMP), log p(GEN)]` at the current step.
    pub fn type_logp(&self) -> [f64; 2] {
        self.type_logp
    }

    pub fn token_ready(&self) -> bool {
        self.token.is_some()
    }
}

impl Generator {
    fn feed<R: Real>(
        &self,
        store: &ParamStore<R>,
        caches: &[KvCache<R>],
        input: &Tensor<R>,
        pos: usize,
        depth: usize,
    ) -> Result<(Vec<KvCache<R>>, Arc<Tensor<R>>, [f64; 2])> {
        if pos > self.cfg.max_words {
            return Err(Error::Limit(format!("position {pos} exceeds {} words", self.cfg.max_words)));
        }
        let p = Tensor::row(store.get(self.type_pos).row_slice(pos).to_vec());
        let mut x = ops::zip("add", input, &p, |a, b| a + b)?;
        let mut out = Vec::with_capacity(caches.len());
        for (blk, c) in self.type_blocks.iter().zip(caches) {
            let (y, c2) = blk.step(store, &x, c)?;
            x = y;
            out.push(c2);
        }
        let h = self.type_ln.apply(store, &x)?;
        let logits = self.type_head.apply(store, &h)?;
        let mask = type_mask(depth);
        let lp = ops::log_softmax_rows(&logits, Some(&mask))?;
        Ok((out, Arc::new(x), [lp.data()[0].f64(), lp.data()[1].f64()]))
    }

    fn embedding<R: Real>(&self, store: &ParamStore<R>, id: usize) -> Tensor<R> {
        Tensor::row(store.get(self.embed).row_slice(id).to_vec())
    }

    /// State after feeding the sentinel.
    pub fn start<R: Real>(&self, store: &ParamStore<R>) -> Result<GenState<R>> {
        let empty = vec![None; self.type_blocks.len()];
        let (type_caches, h, type_logp) = self.feed(store, &empty, &self.embedding(store, BOS), 0, 0)?;
        Ok(GenState {
            type_caches,
            token_caches: vec![None; self.token_blocks.len()],
            stack: Vec::new(),
            words: 0,
            steps: 0,
            finished: false,
            h,
            type_logp,
            token: None,
        })
    }

    /// Runs the token layers for the current step and caches the masked
    /// log-distribution over the vocabulary.
    pub fn prepare_tokens<R: Real>(&self, store: &ParamStore<R>, st: &mut GenState<R>) -> Result<Arc<Vec<f64>>> {
        if let Some((lp, _)) = &st.token {
            return Ok(lp.clone());
        }
        if st.words > self.cfg.max_words {
            return Err(Error::Limit(format!("more than {} words", self.cfg.max_words)));
        }
        let p = Tensor::row(store.get(self.token_pos).row_slice(st.words).to_vec());
        let mut y = ops::zip("add", &st.h, &p, |a, b| a + b)?;
        let mut caches = Vec::with_capacity(self.token_blocks.len());
        for (blk, c) in self.token_blocks.iter().zip(&st.token_caches) {
            let (out, c2) = blk.step(store, &y, c)?;
            y = out;
            caches.push(c2);
        }
        let h = self.token_ln.apply(store, &y)?;
        let logits = self.token_head.apply(store, &h)?;
        let mask = token_mask(self.vocab_size, st.depth());
        let lp = ops::log_softmax_rows(&logits, Some(&mask))?;
        let lp = Arc::new(lp.data().iter().map(|x| x.f64()).collect::<Vec<_>>());
        st.token = Some((lp.clone(), caches));
        Ok(lp)
    }

    /// Log-probability of `action` in state `st`.
    pub fn action_logp<R: Real>(&self, store: &ParamStore<R>, st: &mut GenState<R>, action: Action) -> Result<f64> {
        match action {
            Action::Comp => Ok(st.type_logp[0]),
            Action::Gen(x) => {
                let lp = self.prepare_tokens(store, st)?;
                let t = lp.get(x).ok_or_else(|| Error::InvalidAction(format!("token {x} outside the vocabulary")))?;
                Ok(st.type_logp[1] + t)
            }
        }
    }

    /// Applies an action and returns the successor state.
    pub fn apply<R: Real>(
        &self,
        store: &ParamStore<R>,
        comp: &CompositionModel,
        st: &GenState<R>,
        action: Action,
    ) -> Result<GenState<R>> {
        if st.finished {
            return Err(Error::InvalidAction("sentence already ended".into()));
        }
        let mut next = st.clone();
        next.steps += 1;
        next.token = None;
        match action {
            Action::Comp => {
                if st.depth() < 2 {
                    return Err(Error::InvalidAction(format!("COMP at stack depth {}", st.depth())));
                }
                let r = next.stack.pop().unwrap();
                let l = next.stack.pop().unwrap();
                let mut g = Eager::new(store);
                let (lc, rc) = (g.constant((*l.comp).clone()), g.constant((*r.comp).clone()));
                let c = comp.compose(&mut g, &lc, &rc)?;
                let input = if self.cfg.use_surrogate {
                    comp.up.apply(store, &c)?
                } else {
                    self.embedding(store, COMP)
                };
                next.stack.push(StackItem { comp: c, input: Arc::new(input), span: (l.span.0, r.span.1) });
            }
            Action::Gen(x) => {
                let mut cur = st.clone();
                let lp = self.prepare_tokens(store, &mut cur)?;
                if x >= self.vocab_size || lp[x] == f64::NEG_INFINITY || !token_mask(self.vocab_size, st.depth())[x] {
                    return Err(Error::InvalidAction(format!("GEN({x}) at stack depth {}", st.depth())));
                }
                next.token_caches = cur.token.take().unwrap().1;
                next.words += 1;
                if x == EOS {
                    next.finished = true;
                    return Ok(next);
                }
                let e = self.embedding(store, x);
                let c = comp.down.apply(store, &e)?;
                let w = st.words;
                next.stack.push(StackItem { comp: Arc::new(c), input: Arc::new(e), span: (w, w) });
            }
        }
        let top = next.stack.last().expect("non-empty stack").input.clone();
        let (caches, h, lp) = self.feed(store, &next.type_caches, &top, next.words, next.depth())?;
        next.type_caches = caches;
        next.h = h;
        next.type_logp = lp;
        Ok(next)
    }
}
