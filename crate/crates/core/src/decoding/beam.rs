//! Hypotheses and beam steps.

use std::cmp::Ordering;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rayon::prelude::*;

use crate::corpus::vocab::EOS;
use crate::error::{Error, Result};
use crate::generator::{Action, GenState};
use crate::model::Gpst;
use crate::numerics::{ParamStore, Real};

#[derive(Clone, Debug)]
pub struct Hypothesis<R> {
    pub state: GenState<R>,
    pub actions: Vec<Action>,
    pub logp: f64,
}

impl<R: Real> Hypothesis<R> {
    pub fn start(store: &ParamStore<R>, model: &Gpst) -> Result<Self> {
        Ok(Hypothesis { state: model.gen.start(store)?, actions: Vec::new(), logp: 0.0 })
    }

    pub fn words(&self) -> usize {
        self.state.words
    }

    pub fn finished(&self) -> bool {
        self.state.finished
    }

    /// True for the empty start and for anything whose last action is GEN.
    pub fn synced(&self) -> bool {
        self.actions.last().is_none_or(|a| a.is_gen())
    }
}

/// Which GEN actions a hypothesis may take at a word step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TokenChoice {
    /// The `m` most probable tokens.
    TopM(usize),
    /// Exactly this token.
    Forced(usize),
    /// One token drawn from the renormalized `k` most probable.
    Sample(usize),
}

/// A pool entry: either an existing hypothesis kept as is or a one-action
/// extension of it.
#[derive(Clone, Copy, Debug)]
struct Entry {
    base: usize,
    action: Option<Action>,
    logp: f64,
}

/// Highest score first; ties go to the shorter history, then the
/// lexicographically smaller action ids.
fn rank<R>(base: &[Hypothesis<R>], a: &Entry, b: &Entry) -> Ordering {
    b.logp.total_cmp(&a.logp).then_with(|| {
        let len = |e: &Entry| base[e.base].actions.len() + usize::from(e.action.is_some());
        len(a).cmp(&len(b)).then_with(|| {
            let ids = |e: &Entry| base[e.base].actions.iter().chain(e.action.iter()).map(|x| x.id()).collect::<Vec<_>>();
            ids(a).cmp(&ids(b))
        })
    })
}

fn top_tokens(lp: &[f64], m: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..lp.len()).filter(|&i| lp[i] > f64::NEG_INFINITY).collect();
    idx.sort_by(|&a, &b| lp[b].total_cmp(&lp[a]).then(a.cmp(&b)));
    idx.truncate(m);
    idx
}

/// Feasible one-action extensions of every hypothesis in `base` selected
/// by `which`. Token sampling draws from `rng` in hypothesis order.
fn expand<R: Real>(
    store: &ParamStore<R>,
    model: &Gpst,
    base: &mut [Hypothesis<R>],
    which: &[usize],
    choice: TokenChoice,
    rng: &mut impl Rng,
) -> Result<Vec<Entry>> {
    // Token distributions are independent per hypothesis.
    let lps: Vec<Option<std::sync::Arc<Vec<f64>>>> = base
        .par_iter_mut()
        .enumerate()
        .map(|(i, h)| {
            if !which.contains(&i) || h.finished() {
                return Ok(None);
            }
            model.gen.prepare_tokens(store, &mut h.state).map(Some)
        })
        .collect::<Result<_>>()?;
    let mut out = Vec::new();
    for &i in which {
        let h = &base[i];
        let Some(lp) = &lps[i] else { continue };
        let [lc, lg] = h.state.type_logp();
        if h.state.depth() >= 2 && lc > f64::NEG_INFINITY {
            out.push(Entry { base: i, action: Some(Action::Comp), logp: h.logp + lc });
        }
        let toks = match choice {
            TokenChoice::TopM(m) => top_tokens(lp, m),
            TokenChoice::Forced(x) => {
                if lp.get(x).is_some_and(|v| *v > f64::NEG_INFINITY) {
                    vec![x]
                } else {
                    Vec::new()
                }
            }
            TokenChoice::Sample(k) => {
                let cand = top_tokens(lp, k);
                if cand.is_empty() {
                    Vec::new()
                } else {
                    let top = lp[cand[0]];
                    let w: Vec<f64> = cand.iter().map(|&x| (lp[x] - top).exp()).collect();
                    let d = WeightedIndex::new(&w).map_err(|e| Error::NonFinite(format!("sampling weights: {e}")))?;
                    vec![cand[d.sample(rng)]]
                }
            }
        };
        for x in toks {
            out.push(Entry { base: i, action: Some(Action::Gen(x)), logp: h.logp + lg + lp[x] });
        }
    }
    Ok(out)
}

fn select<R>(base: &[Hypothesis<R>], mut pool: Vec<Entry>, k: usize) -> Vec<Entry> {
    pool.sort_by(|a, b| rank(base, a, b));
    pool.truncate(k);
    pool
}

fn materialize<R: Real>(
    store: &ParamStore<R>,
    model: &Gpst,
    base: &[Hypothesis<R>],
    picked: &[Entry],
) -> Result<Vec<Hypothesis<R>>> {
    picked
        .par_iter()
        .map(|e| {
            let h = &base[e.base];
            match e.action {
                None => Ok(h.clone()),
                Some(a) => {
                    let state = model.gen.apply(store, &model.comp, &h.state, a)?;
                    let mut actions = h.actions.clone();
                    actions.push(a);
                    Ok(Hypothesis { state, actions, logp: e.logp })
                }
            }
        })
        .collect()
}

/// One word-synchronous step. Every hypothesis is expanded, the pool is
/// ranked and cut to `k`; survivors that ended in COMP are expanded again
/// and re-pooled with the GEN-ended ones until all survivors end in GEN.
/// Finished hypotheses in the input are carried along unchanged.
pub fn word_beam_step<R: Real>(
    store: &ParamStore<R>,
    model: &Gpst,
    beam: Vec<Hypothesis<R>>,
    k: usize,
    choice: TokenChoice,
    rng: &mut impl Rng,
) -> Result<Vec<Hypothesis<R>>> {
    if k == 0 {
        return Err(Error::Config("beam width must be positive".into()));
    }
    let mut base = beam;
    let all: Vec<usize> = (0..base.len()).filter(|&i| !base[i].finished()).collect();
    let mut pool = expand(store, model, &mut base, &all, choice, rng)?;
    pool.extend((0..base.len()).filter(|&i| base[i].finished()).map(|i| Entry { base: i, action: None, logp: base[i].logp }));
    if pool.is_empty() {
        return Err(Error::EmptyBeam);
    }
    let picked = select(&base, pool, k);
    let mut cur = materialize(store, model, &base, &picked)?;
    // Each round strictly lowers the stack of a COMP-ended hypothesis, so
    // the loop ends after at most max-depth rounds.
    let cap = cur.iter().map(|h| h.state.depth()).max().unwrap_or(0) + 1;
    for _ in 0..cap {
        if cur.iter().all(|h| h.synced()) {
            return Ok(cur);
        }
        let mut base = cur;
        let open: Vec<usize> = (0..base.len()).filter(|&i| !base[i].synced()).collect();
        let mut pool: Vec<Entry> = (0..base.len())
            .filter(|&i| base[i].synced())
            .map(|i| Entry { base: i, action: None, logp: base[i].logp })
            .collect();
        pool.extend(expand(store, model, &mut base, &open, choice, rng)?);
        if pool.is_empty() {
            return Err(Error::EmptyBeam);
        }
        let picked = select(&base, pool, k);
        cur = materialize(store, model, &base, &picked)?;
    }
    if cur.iter().all(|h| h.synced()) {
        Ok(cur)
    } else {
        Err(Error::InvalidAction("beam failed to synchronize".into()))
    }
}

/// One action-level step: every open hypothesis takes one action, and the
/// pool, finished hypotheses included, is cut to `k` regardless of word
/// counts. `choice` is resolved per hypothesis by `forced`.
pub fn action_beam_step<R: Real>(
    store: &ParamStore<R>,
    model: &Gpst,
    beam: Vec<Hypothesis<R>>,
    k: usize,
    choice: impl Fn(&Hypothesis<R>) -> TokenChoice,
    rng: &mut impl Rng,
) -> Result<Vec<Hypothesis<R>>> {
    let mut base = beam;
    let mut pool: Vec<Entry> = (0..base.len())
        .filter(|&i| base[i].finished())
        .map(|i| Entry { base: i, action: None, logp: base[i].logp })
        .collect();
    for i in 0..base.len() {
        if !base[i].finished() {
            let c = choice(&base[i]);
            pool.extend(expand(store, model, &mut base, &[i], c, rng)?);
        }
    }
    if pool.is_empty() {
        return Err(Error::EmptyBeam);
    }
    let picked = select(&base, pool, k);
    materialize(store, model, &base, &picked)
}

/// Log of the summed probabilities of a set of hypotheses.
pub fn log_sum<R>(hyps: &[Hypothesis<R>]) -> f64 {
    let m = hyps.iter().map(|h| h.logp).fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + hyps.iter().map(|h| (h.logp - m).exp()).sum::<f64>().ln()
}

/// Forced token for constrained parsing: the next word, then the end token.
pub fn next_forced(tokens: &[usize], words: usize) -> TokenChoice {
    TokenChoice::Forced(tokens.get(words).copied().unwrap_or(EOS))
}
