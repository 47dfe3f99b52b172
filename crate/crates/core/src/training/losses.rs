//! Per-sentence objectives and the E-step.

use crate::composition::{
    induce_tree, inside_pruned, outside, BinaryTree, ChartOptions, InsideChart, MergeSchedule, OutsideChart,
};
use crate::corpus::tokenize::TokenizedSentence;
use crate::error::Result;
use crate::generator::{linearize_postorder, loss_ar, ActionSequence};
use crate::model::Gpst;
use crate::numerics::{Backend, Eager, ParamStore, Real, Tensor};

/// Reconstruction loss: mean negative log-likelihood of each token given
/// its outside vector, scored against the embedding table.
/// `outside_leaves` is `[n, width]`, `embeddings` `[|V|, width]`.
pub fn loss_ae<R: Real, B: Backend<R>>(g: &mut B, outside_leaves: &B::T, embeddings: &B::T, ids: &[usize]) -> Result<B::T> {
    let logits = g.matmul_nt(outside_leaves, embeddings)?;
    let lp = g.log_softmax(&logits, None)?;
    let picked = g.pick(&lp, ids)?;
    let m = g.mean_all(&picked)?;
    g.scale(&m, -1.0)
}

/// Parser loss: sum over the tree's split decisions of the softmax NLL of
/// the chosen boundary among the boundaries inside its span. `v` holds the
/// `[n - 1, 1]` boundary scores.
pub fn loss_parser<R: Real, B: Backend<R>>(g: &mut B, v: Option<&B::T>, tree: &BinaryTree) -> Result<B::T> {
    let mut terms = Vec::new();
    if let Some(v) = v {
        for ((i, j), &k) in tree.splits() {
            if j - i < 2 {
                continue;
            }
            let idx: Vec<usize> = (*i..*j).collect();
            let sel = g.select_rows(v, &idx)?;
            let row = g.reshape(&sel, &[1, idx.len()])?;
            let lp = g.log_softmax(&row, None)?;
            terms.push(g.pick(&lp, &[k - i])?);
        }
    }
    let mut total = g.constant(Tensor::scalar(R::zero()));
    for t in &terms {
        total = g.add(&total, t)?;
    }
    g.scale(&total, -1.0)
}

/// Hinge on the root's weighted height, normalized by sentence length.
pub fn loss_height<R: Real, B: Backend<R>>(g: &mut B, chart: &InsideChart<B::T>, h_thrs: f64) -> Result<B::T> {
    let h = chart.root_height(g)?;
    let over = g.add_scalar(&h, -h_thrs)?;
    let hinge = g.relu(&over)?;
    g.scale(&hinge, 1.0 / chart.n as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossOptions {
    pub h_thrs: f64,
    pub grad_stop: bool,
}

impl Default for LossOptions {
    fn default() -> Self {
        LossOptions { h_thrs: 15.0, grad_stop: true }
    }
}

/// Everything one sentence contributes to a training step.
pub struct SentenceLosses<T> {
    pub ae: T,
    pub ar: T,
    pub parser: T,
    pub height: T,
    pub tree: BinaryTree,
    pub actions: ActionSequence,
    pub chart: InsideChart<T>,
    pub outside: OutsideChart<T>,
    /// Boundary scores, absent for one-token sentences.
    pub scores: Option<T>,
}

/// The E-step pieces: leaves, boundary scores, schedule, pruned chart and
/// the induced tree. Tree selection reads values only.
pub fn e_step<R: Real, B: Backend<R>>(
    g: &mut B,
    model: &Gpst,
    sent: &TokenizedSentence,
    opts: ChartOptions,
) -> Result<(B::T, Option<B::T>, InsideChart<B::T>, BinaryTree)> {
    let leaves = model.leaves(g, &sent.ids)?;
    let (scores, schedule) = if sent.len() >= 2 {
        let v = model.comp.parser.scores(g, &leaves)?;
        let vals: Vec<f64> = g.value(&v).data().iter().map(|x| x.f64()).collect();
        let s = MergeSchedule::build(&vals, &sent.atomic, model.comp.cfg.window)?;
        (Some(v), s)
    } else {
        (None, MergeSchedule::build(&[], &sent.atomic, model.comp.cfg.window)?)
    };
    let chart = inside_pruned(g, &model.comp, &leaves, &schedule, opts)?;
    let tree = induce_tree(g, &chart)?;
    Ok((leaves, scores, chart, tree))
}

pub fn sentence_losses<R: Real, B: Backend<R>>(
    g: &mut B,
    model: &Gpst,
    sent: &TokenizedSentence,
    opts: LossOptions,
) -> Result<SentenceLosses<B::T>> {
    let (_, scores, chart, tree) = e_step(g, model, sent, ChartOptions { grad_stop: opts.grad_stop })?;
    let out = outside(g, &model.comp, &chart)?;
    let emb = model.output_embeddings(g)?;
    let ae = loss_ae(g, out.leaves(), &emb, &sent.ids)?;
    let parser = loss_parser(g, scores.as_ref(), &tree)?;
    let height = loss_height(g, &chart, opts.h_thrs)?;
    let actions = linearize_postorder(&tree, &sent.ids)?.with_eos()?;
    let inputs = model.gen.assemble_inputs(g, &model.comp, &chart, &actions, &sent.ids)?;
    let o = model.gen.forward_train(g, &inputs, &actions)?;
    let ar = loss_ar(g, &o, &actions)?;
    Ok(SentenceLosses { ae, ar, parser, height, tree, actions, chart, outside: out, scores })
}

/// Tree induced by the composition model for one sentence.
pub fn induce<R: Real>(store: &ParamStore<R>, model: &Gpst, sent: &TokenizedSentence) -> Result<BinaryTree> {
    let mut g = Eager::new(store);
    Ok(e_step(&mut g, model, sent, ChartOptions::default())?.3)
}
