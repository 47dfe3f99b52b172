//! One optimizer step over a batch, and the loop around it.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::losses::{sentence_losses, LossOptions};
use crate::corpus::batch::batch_iter;
use crate::corpus::tokenize::TokenizedSentence;
use crate::error::{Error, Result};
use crate::model::Gpst;
use crate::numerics::{AdamConfig, Backend, Eager, GradBuffer, Graph, LossRoot, ParamStore, Real, StepOutcome};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    /// Padded tokens per batch.
    pub batch_tokens: usize,
    pub steps: u64,
    pub seed: u64,
    /// Height above which the root's weighted height is penalized.
    pub h_thrs: f64,
    /// Keep the autoregressive loss away from the split scores. Turning
    /// this off is the ablation.
    pub grad_stop: bool,
    pub clip_norm: Option<f64>,
    /// Sentences longer than this are truncated.
    pub max_len: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            batch_tokens: 256,
            steps: 1000,
            seed: 0,
            h_thrs: 15.0,
            grad_stop: true,
            clip_norm: Some(1.0),
            max_len: 64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.h_thrs < 1.0 {
            return Err(Error::Config(format!("h_thrs must be at least 1, got {}", self.h_thrs)));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.batch_tokens == 0 || self.max_len == 0 {
            return Err(Error::Config("batch_tokens and max_len must be positive".into()));
        }
        Ok(())
    }

    pub fn loss_options(&self) -> LossOptions {
        LossOptions { h_thrs: self.h_thrs, grad_stop: self.grad_stop }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, clip_norm: self.clip_norm, ..AdamConfig::default() }
    }
}

/// Token-weighted batch averages plus tree statistics.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub step: u64,
    pub l_ae: f64,
    pub l_ar: f64,
    pub l_p: f64,
    pub l_h: f64,
    /// `l_ae + l_p + l_h + l_ar`.
    pub total: f64,
    pub tokens: usize,
    pub sentences: usize,
    pub mean_height: f64,
    pub max_height: usize,
    /// Largest weighted root height in the batch.
    pub max_root_height: f64,
    pub grad_norm: Option<f64>,
    /// Why the update was not applied, if it was not.
    pub skipped: Option<String>,
}

impl LossReport {
    fn from_parts(parts: &[SentenceStats]) -> Self {
        let tokens: usize = parts.iter().map(|p| p.tokens).sum();
        let w = |f: fn(&SentenceStats) -> f64| parts.iter().map(|p| f(p) * p.tokens as f64).sum::<f64>() / tokens.max(1) as f64;
        let (l_ae, l_ar, l_p, l_h) = (w(|p| p.ae), w(|p| p.ar), w(|p| p.parser), w(|p| p.height));
        LossReport {
            l_ae,
            l_ar,
            l_p,
            l_h,
            total: l_ae + l_ar + l_p + l_h,
            tokens,
            sentences: parts.len(),
            mean_height: parts.iter().map(|p| p.tree_height as f64).sum::<f64>() / parts.len().max(1) as f64,
            max_height: parts.iter().map(|p| p.tree_height).max().unwrap_or(0),
            max_root_height: parts.iter().map(|p| p.root_height).fold(0.0, f64::max),
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug)]
struct SentenceStats {
    ae: f64,
    ar: f64,
    parser: f64,
    height: f64,
    tokens: usize,
    tree_height: usize,
    root_height: f64,
}

fn stats<R: Real, B: Backend<R>>(g: &mut B, l: &super::losses::SentenceLosses<B::T>, n: usize) -> Result<SentenceStats> {
    let rh = l.chart.root_height(g)?;
    let s = SentenceStats {
        ae: g.scalar_value(&l.ae),
        ar: g.scalar_value(&l.ar),
        parser: g.scalar_value(&l.parser),
        height: g.scalar_value(&l.height),
        tokens: n,
        tree_height: l.tree.height(),
        root_height: g.scalar_value(&rh),
    };
    let all = [s.ae, s.ar, s.parser, s.height];
    if all.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!("sentence losses {all:?}")));
    }
    Ok(s)
}

/// Gradients of one sentence. The auto-encoding side (`L_ae + L_p + L_h`)
/// and the autoregressive loss are differentiated in separate passes so the
/// split-score barrier can tell them apart.
pub fn sentence_gradients<R: Real>(
    store: &ParamStore<R>,
    model: &Gpst,
    sent: &TokenizedSentence,
    opts: LossOptions,
) -> Result<(GradBuffer<R>, f64)> {
    let (g, s) = sentence_pass(store, model, sent, opts)?;
    Ok((g, s.ae + s.ar + s.parser + s.height))
}

fn sentence_pass<R: Real>(
    store: &ParamStore<R>,
    model: &Gpst,
    sent: &TokenizedSentence,
    opts: LossOptions,
) -> Result<(GradBuffer<R>, SentenceStats)> {
    let mut g = Graph::new(store);
    let l = sentence_losses(&mut g, model, sent, opts)?;
    let st = stats(&mut g, &l, sent.len())?;
    let a = g.add(&l.ae, &l.parser)?;
    let ae_star = g.add(&a, &l.height)?;
    let mut grads = g.backward(ae_star, Some(LossRoot::AutoEncoding))?.into_params();
    let ar = g.backward(l.ar, Some(LossRoot::AutoRegression))?;
    grads.merge(ar.params(), R::one());
    Ok((grads, st))
}

/// Losses of a batch without touching the parameters.
pub fn evaluate_batch<R: Real>(
    store: &ParamStore<R>,
    model: &Gpst,
    batch: &[TokenizedSentence],
    opts: LossOptions,
) -> Result<LossReport> {
    let parts = batch
        .par_iter()
        .map(|s| {
            let mut g = Eager::new(store);
            let l = sentence_losses(&mut g, model, s, opts)?;
            stats(&mut g, &l, s.len())
        })
        .collect::<Result<Vec<_>>>()?;
    let mut r = LossReport::from_parts(&parts);
    r.step = store.step_count();
    Ok(r)
}

/// One hard-EM step: per-sentence E-step and gradients in parallel, then a
/// single token-weighted Adam update. A non-finite loss anywhere skips the
/// update and is reported.
pub fn train_step<R: Real>(
    store: &mut ParamStore<R>,
    model: &Gpst,
    batch: &[TokenizedSentence],
    cfg: &TrainConfig,
) -> Result<LossReport> {
    let opts = cfg.loss_options();
    let results: Vec<Result<(GradBuffer<R>, SentenceStats)>> =
        batch.par_iter().map(|s| sentence_pass(store, model, s, opts)).collect();
    let mut parts = Vec::with_capacity(batch.len());
    let mut grads = Vec::with_capacity(batch.len());
    let mut skipped = None;
    for r in results {
        match r {
            Ok((g, s)) => {
                grads.push(g);
                parts.push(s);
            }
            Err(Error::NonFinite(msg)) => skipped = Some(msg),
            Err(e) => return Err(e),
        }
    }
    let mut report = LossReport::from_parts(&parts);
    if skipped.is_some() {
        report.skipped = skipped;
        report.step = store.step_count();
        log::warn!("step {} skipped: {:?}", report.step, report.skipped);
        return Ok(report);
    }
    store.zero_grad();
    let total = report.tokens.max(1) as f64;
    for (g, p) in grads.iter().zip(&parts) {
        store.accumulate(g, R::of(p.tokens as f64 / total));
    }
    match store.adam_step(&cfg.adam()) {
        StepOutcome::Applied { grad_norm } => report.grad_norm = Some(grad_norm),
        StepOutcome::Skipped { reason } => {
            log::warn!("update skipped: {reason}");
            report.skipped = Some(reason);
        }
    }
    report.step = store.step_count();
    Ok(report)
}

/// Endless deterministic batch stream: epoch `e` is shuffled with
/// `seed + e`.
pub struct BatchStream<'a> {
    data: &'a [TokenizedSentence],
    cfg: TrainConfig,
    epoch: u64,
    cur: std::vec::IntoIter<crate::corpus::batch::Batch>,
}

impl<'a> BatchStream<'a> {
    pub fn new(data: &'a [TokenizedSentence], cfg: &TrainConfig) -> Result<Self> {
        if data.iter().all(|s| s.is_empty()) {
            return Err(Error::Config("training data has no non-empty sentences".into()));
        }
        let mut s = BatchStream { data, cfg: cfg.clone(), epoch: 0, cur: Vec::new().into_iter() };
        s.refill();
        Ok(s)
    }

    fn refill(&mut self) {
        let seed = self.cfg.seed.wrapping_add(self.epoch);
        self.cur = batch_iter(self.data, self.cfg.batch_tokens, self.cfg.max_len, seed).collect::<Vec<_>>().into_iter();
        self.epoch += 1;
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }
}

impl Iterator for BatchStream<'_> {
    type Item = Vec<TokenizedSentence>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            if let Some(b) = self.cur.next() {
                return Some(b.sentences);
            }
            self.refill();
        }
    }
}

/// Runs one step per batch until `cfg.steps` batches have been consumed.
/// The store's step counter tells a resumed run how many batches to skip,
/// so it sees the same data order as an uninterrupted one (a skipped
/// update shifts this by one batch). `on_step` is called after every step.
pub fn train<R: Real>(
    store: &mut ParamStore<R>,
    model: &Gpst,
    data: &[TokenizedSentence],
    cfg: &TrainConfig,
    mut on_step: impl FnMut(&LossReport, &ParamStore<R>) -> Result<()>,
) -> Result<LossReport> {
    cfg.validate()?;
    let mut stream = BatchStream::new(data, cfg)?;
    let start = store.step_count();
    for _ in 0..start {
        stream.next();
    }
    let mut last = LossReport { step: start, ..Default::default() };
    for _ in start..cfg.steps {
        let batch = stream.next().expect("stream is endless");
        last = train_step(store, model, &batch, cfg)?;
        on_step(&last, store)?;
    }
    Ok(last)
}
