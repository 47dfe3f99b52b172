//! Recording backend and reverse-mode accumulation.

use std::collections::HashMap;
use std::sync::Arc;

use super::backend::{forward, Aux, Backend, LossRoot, Op};
use super::params::{GradBuffer, ParamId, ParamStore};
use super::real::Real;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub usize);

struct Node<R> {
    value: Arc<Tensor<R>>,
    op: Option<Op<R>>,
    inputs: Vec<usize>,
    aux: Aux<R>,
    needs_grad: bool,
    param: Option<ParamId>,
}

/// Append-only tape. Inputs of every node precede it.
pub struct Graph<'s, R> {
    store: &'s ParamStore<R>,
    nodes: Vec<Node<R>>,
    leaves: HashMap<ParamId, usize>,
    has_barrier: bool,
}

/// Gradients of one backward pass, per tape node.
pub struct Gradients<R> {
    grads: Vec<Option<Vec<R>>>,
    params: GradBuffer<R>,
}

impl<R: Real> Gradients<R> {
    pub fn wrt(&self, v: Var) -> Option<&[R]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn params(&self) -> &GradBuffer<R> {
        &self.params
    }

    pub fn into_params(self) -> GradBuffer<R> {
        self.params
    }
}

impl<'s, R: Real> Graph<'s, R> {
    pub fn new(store: &'s ParamStore<R>) -> Self {
        Graph { store, nodes: Vec::new(), leaves: HashMap::new(), has_barrier: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A differentiable leaf that is not a parameter (used by tests and
    /// gradient checks on intermediate inputs).
    pub fn input(&mut self, t: Tensor<R>) -> Var {
        self.push(Arc::new(t), None, Vec::new(), Aux::None, true, None)
    }

    fn push(
        &mut self,
        value: Arc<Tensor<R>>,
        op: Option<Op<R>>,
        inputs: Vec<usize>,
        aux: Aux<R>,
        needs_grad: bool,
        param: Option<ParamId>,
    ) -> Var {
        self.nodes.push(Node { value, op, inputs, aux, needs_grad, param });
        Var(self.nodes.len() - 1)
    }

    /// Reverse accumulation from a scalar root. `label` identifies the loss
    /// for selective barriers and is mandatory once the tape holds one.
    pub fn backward(&self, root: Var, label: Option<LossRoot>) -> Result<Gradients<R>> {
        if self.has_barrier && label.is_none() {
            return Err(Error::MissingRootLabel);
        }
        let rv = &self.nodes[root.0].value;
        if rv.len() != 1 {
            return Err(Error::shape("backward", format!("root must be scalar, got {:?}", rv.shape())));
        }
        if !rv.data()[0].is_finite() {
            return Err(Error::NonFinite(format!("loss value {}", rv.data()[0])));
        }
        let mut grads: Vec<Option<Vec<R>>> = (0..=root.0).map(|_| None).collect();
        grads[root.0] = Some(vec![R::one()]);
        for id in (0..=root.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if let Some(op) = &node.op {
                self.vjp(op, node, &g, label, &mut grads);
            }
            grads[id] = Some(g);
        }
        let mut params = GradBuffer::new(self.store.len());
        for (&pid, &nid) in &self.leaves {
            // Parameters first read after the root cannot affect it.
            if let Some(Some(g)) = grads.get(nid) {
                params.add(pid, g, R::one());
            }
        }
        Ok(Gradients { grads, params })
    }

    fn vjp(
        &self,
        op: &Op<R>,
        node: &Node<R>,
        g: &[R],
        label: Option<LossRoot>,
        grads: &mut [Option<Vec<R>>],
    ) {
        let ins = &node.inputs;
        let val = |i: usize| self.nodes[ins[i]].value.as_ref();
        let y = node.value.as_ref();
        // Accumulates `f(j)` into element `j` of input `i`.
        let mut acc = |i: usize, f: &mut dyn FnMut(&mut [R])| {
            let nid = ins[i];
            if !self.nodes[nid].needs_grad {
                return;
            }
            let len = self.nodes[nid].value.len();
            let buf = grads[nid].get_or_insert_with(|| vec![R::zero(); len]);
            f(buf);
        };
        match op {
            Op::Matmul => {
                let (a, b) = (val(0), val(1));
                let (m, k, n) = (a.rows(), a.cols(), b.cols());
                acc(0, &mut |ga| R::gemm_nt_acc(m, n, k, g, b.data(), ga));
                acc(1, &mut |gb| R::gemm_tn_acc(k, m, n, a.data(), g, gb));
            }
            Op::MatmulNt => {
                let (a, b) = (val(0), val(1));
                let (m, k, n) = (a.rows(), a.cols(), b.rows());
                acc(0, &mut |ga| R::gemm_acc(m, n, k, g, b.data(), ga));
                acc(1, &mut |gb| R::gemm_tn_acc(n, m, k, g, a.data(), gb));
            }
            Op::Add => {
                acc(0, &mut |ga| add_into(ga, g));
                acc(1, &mut |gb| add_into(gb, g));
            }
            Op::Sub => {
                acc(0, &mut |ga| add_into(ga, g));
                acc(1, &mut |gb| {
                    for (o, &x) in gb.iter_mut().zip(g) {
                        *o -= x;
                    }
                });
            }
            Op::Mul => {
                let (a, b) = (val(0), val(1));
                acc(0, &mut |ga| {
                    for ((o, &x), &bv) in ga.iter_mut().zip(g).zip(b.data()) {
                        *o += x * bv;
                    }
                });
                acc(1, &mut |gb| {
                    for ((o, &x), &av) in gb.iter_mut().zip(g).zip(a.data()) {
                        *o += x * av;
                    }
                });
            }
            Op::Maximum => {
                let (a, b) = (val(0), val(1));
                let pick_a = |j: usize| a.data()[j] >= b.data()[j];
                acc(0, &mut |ga| {
                    for (j, o) in ga.iter_mut().enumerate() {
                        if pick_a(j) {
                            *o += g[j];
                        }
                    }
                });
                acc(1, &mut |gb| {
                    for (j, o) in gb.iter_mut().enumerate() {
                        if !pick_a(j) {
                            *o += g[j];
                        }
                    }
                });
            }
            Op::AddRow => {
                let n = val(0).cols();
                acc(0, &mut |gx| add_into(gx, g));
                acc(1, &mut |gb| {
                    for row in g.chunks(n) {
                        add_into(gb, row);
                    }
                });
            }
            Op::Scale(c) => acc(0, &mut |gx| {
                for (o, &x) in gx.iter_mut().zip(g) {
                    *o += x * *c;
                }
            }),
            Op::AddScalar(_) | Op::Reshape(_) | Op::Barrier(_) if !blocked(op, label) => {
                acc(0, &mut |gx| add_into(gx, g))
            }
            Op::AddScalar(_) | Op::Reshape(_) | Op::Barrier(_) | Op::StopGradient => {}
            Op::Exp => acc(0, &mut |gx| {
                for ((o, &x), &yv) in gx.iter_mut().zip(g).zip(y.data()) {
                    *o += x * yv;
                }
            }),
            Op::Log => {
                let a = val(0);
                acc(0, &mut |gx| {
                    for ((o, &x), &av) in gx.iter_mut().zip(g).zip(a.data()) {
                        *o += x / av;
                    }
                })
            }
            Op::Gelu => {
                let a = val(0);
                acc(0, &mut |gx| {
                    for ((o, &x), &av) in gx.iter_mut().zip(g).zip(a.data()) {
                        *o += x * super::ops::gelu_grad(av);
                    }
                })
            }
            Op::Relu => {
                let a = val(0);
                acc(0, &mut |gx| {
                    for ((o, &x), &av) in gx.iter_mut().zip(g).zip(a.data()) {
                        if av > R::zero() {
                            *o += x;
                        }
                    }
                })
            }
            Op::SumAll => acc(0, &mut |gx| {
                for o in gx.iter_mut() {
                    *o += g[0];
                }
            }),
            Op::MeanAll => {
                let s = g[0] / R::of(val(0).len() as f64);
                acc(0, &mut |gx| {
                    for o in gx.iter_mut() {
                        *o += s;
                    }
                })
            }
            Op::SumCols => {
                let n = val(0).cols();
                acc(0, &mut |gx| {
                    for (row, &gr) in gx.chunks_mut(n).zip(g) {
                        for o in row {
                            *o += gr;
                        }
                    }
                })
            }
            Op::Softmax(_) => {
                let n = y.cols();
                acc(0, &mut |gx| {
                    for ((dst, yr), gr) in gx.chunks_mut(n).zip(y.data().chunks(n)).zip(g.chunks(n)) {
                        let dot: R = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                        for ((o, &yv), &gv) in dst.iter_mut().zip(yr).zip(gr) {
                            *o += yv * (gv - dot);
                        }
                    }
                })
            }
            Op::LogSoftmax(mask) => {
                let n = y.cols();
                acc(0, &mut |gx| {
                    for (r, (dst, yr)) in gx.chunks_mut(n).zip(y.data().chunks(n)).enumerate() {
                        let gr = &g[r * n..(r + 1) * n];
                        let keep = |j: usize| mask.as_ref().is_none_or(|m| m[r * n + j]);
                        let total: R = (0..n).filter(|&j| keep(j)).map(|j| gr[j]).sum();
                        for j in 0..n {
                            if keep(j) {
                                dst[j] += gr[j] - yr[j].exp() * total;
                            }
                        }
                    }
                })
            }
            Op::LayerNorm => {
                let Aux::Norm { means, rstds } = &node.aux else { unreachable!() };
                let (x, gamma) = (val(0), val(1));
                let n = x.cols();
                let nf = R::of(n as f64);
                let xhat = |r: usize, j: usize| (x.data()[r * n + j] - means[r]) * rstds[r];
                acc(1, &mut |gg| {
                    for r in 0..x.rows() {
                        for j in 0..n {
                            gg[j] += g[r * n + j] * xhat(r, j);
                        }
                    }
                });
                acc(2, &mut |gb| {
                    for row in g.chunks(n) {
                        add_into(gb, row);
                    }
                });
                acc(0, &mut |gx| {
                    let mut dxh = vec![R::zero(); n];
                    for r in 0..x.rows() {
                        for j in 0..n {
                            dxh[j] = g[r * n + j] * gamma.data()[j];
                        }
                        let m1 = dxh.iter().copied().sum::<R>() / nf;
                        let m2 = (0..n).map(|j| dxh[j] * xhat(r, j)).sum::<R>() / nf;
                        for j in 0..n {
                            gx[r * n + j] += rstds[r] * (dxh[j] - m1 - xhat(r, j) * m2);
                        }
                    }
                });
            }
            Op::Gather(rows) => {
                let n = y.cols();
                for (r, &src) in rows.iter().enumerate() {
                    acc(r, &mut |gx| add_into(&mut gx[src * n..(src + 1) * n], &g[r * n..(r + 1) * n]));
                }
            }
            Op::ConcatCols => {
                let rows = y.rows();
                let total = y.cols();
                let mut off = 0;
                for i in 0..ins.len() {
                    let w = val(i).cols();
                    acc(i, &mut |gx| {
                        for r in 0..rows {
                            add_into(&mut gx[r * w..(r + 1) * w], &g[r * total + off..r * total + off + w]);
                        }
                    });
                    off += w;
                }
            }
            Op::Pick(idx) => {
                let n = val(0).cols();
                acc(0, &mut |gx| {
                    for (r, &i) in idx.iter().enumerate() {
                        gx[r * n + i] += g[r];
                    }
                })
            }
            Op::SegSoftmax(segs) => acc(0, &mut |gx| {
                let mut off = 0;
                for &s in segs {
                    let yr = &y.data()[off..off + s];
                    let gr = &g[off..off + s];
                    let dot: R = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for j in 0..s {
                        gx[off + j] += yr[j] * (gr[j] - dot);
                    }
                    off += s;
                }
            }),
            Op::SegWeightedSum(segs) => {
                let (w, v) = (val(0), val(1));
                let d = v.cols();
                let seg_of: Vec<usize> =
                    segs.iter().enumerate().flat_map(|(c, &s)| std::iter::repeat_n(c, s)).collect();
                acc(0, &mut |gw| {
                    for (p, &c) in seg_of.iter().enumerate() {
                        let gc = &g[c * d..(c + 1) * d];
                        gw[p] += gc.iter().zip(v.row_slice(p)).map(|(&a, &b)| a * b).sum::<R>();
                    }
                });
                acc(1, &mut |gv| {
                    for (p, &c) in seg_of.iter().enumerate() {
                        let wp = w.data()[p];
                        for (o, &x) in gv[p * d..(p + 1) * d].iter_mut().zip(&g[c * d..(c + 1) * d]) {
                            *o += wp * x;
                        }
                    }
                });
            }
            Op::Attention(lay) => {
                let Aux::Probs(probs) = &node.aux else { unreachable!() };
                let (q, k, v) = (val(0), val(1), val(2));
                let (gq, gk, gv) = attention_vjp(q, k, v, probs, g, *lay);
                acc(0, &mut |o| add_into(o, &gq));
                acc(1, &mut |o| add_into(o, &gk));
                acc(2, &mut |o| add_into(o, &gv));
            }
        }
    }
}

fn blocked<R>(op: &Op<R>, label: Option<LossRoot>) -> bool {
    matches!(op, Op::Barrier(b) if Some(*b) == label)
}

fn add_into<R: Real>(dst: &mut [R], src: &[R]) {
    for (o, &x) in dst.iter_mut().zip(src) {
        *o += x;
    }
}

fn attention_vjp<R: Real>(
    q: &Tensor<R>,
    k: &Tensor<R>,
    v: &Tensor<R>,
    probs: &[R],
    g: &[R],
    lay: super::ops::SeqLayout,
) -> (Vec<R>, Vec<R>, Vec<R>) {
    let width = q.cols();
    let dh = width / lay.heads;
    let l = lay.len;
    let scale = R::one() / R::of(dh as f64).sqrt();
    let mut gq = vec![R::zero(); q.len()];
    let mut gk = vec![R::zero(); k.len()];
    let mut gv = vec![R::zero(); v.len()];
    let (qd, kd, vd) = (q.data(), k.data(), v.data());
    let mut dp = vec![R::zero(); l];
    for b in 0..lay.batch {
        for h in 0..lay.heads {
            let off = h * dh;
            let at = |i: usize| (b * l + i) * width + off;
            for i in 0..l {
                let upto = if lay.causal { i + 1 } else { l };
                let prow = &probs[((b * lay.heads + h) * l + i) * l..][..l];
                let gi = &g[at(i)..at(i) + dh];
                let mut dot = R::zero();
                for j in 0..upto {
                    let vj = &vd[at(j)..at(j) + dh];
                    dp[j] = gi.iter().zip(vj).map(|(&a, &c)| a * c).sum();
                    dot += dp[j] * prow[j];
                    for (o, &x) in gv[at(j)..at(j) + dh].iter_mut().zip(gi) {
                        *o += prow[j] * x;
                    }
                }
                for j in 0..upto {
                    let ds = prow[j] * (dp[j] - dot) * scale;
                    if ds == R::zero() {
                        continue;
                    }
                    for t in 0..dh {
                        gq[at(i) + t] += ds * kd[at(j) + t];
                        gk[at(j) + t] += ds * qd[at(i) + t];
                    }
                }
            }
        }
    }
    (gq, gk, gv)
}

impl<R: Real> Backend<R> for Graph<'_, R> {
    type T = Var;

    fn store(&self) -> &ParamStore<R> {
        self.store
    }

    fn value<'a>(&'a self, t: &'a Var) -> &'a Tensor<R> {
        &self.nodes[t.0].value
    }

    fn constant(&mut self, t: Tensor<R>) -> Var {
        self.push(Arc::new(t), None, Vec::new(), Aux::None, false, None)
    }

    fn param(&mut self, id: ParamId) -> Var {
        if let Some(&n) = self.leaves.get(&id) {
            return Var(n);
        }
        let v = self.push(self.store.arc(id), None, Vec::new(), Aux::None, true, Some(id));
        self.leaves.insert(id, v.0);
        v
    }

    fn apply(&mut self, op: Op<R>, inputs: &[&Var]) -> Result<Var> {
        let ids: Vec<usize> = inputs.iter().map(|v| v.0).collect();
        if matches!(op, Op::StopGradient | Op::Barrier(_)) && ids.len() == 1 {
            self.has_barrier |= matches!(op, Op::Barrier(_));
            let value = Arc::clone(&self.nodes[ids[0]].value);
            let needs = !matches!(op, Op::StopGradient) && self.nodes[ids[0]].needs_grad;
            return Ok(self.push(value, Some(op), ids, Aux::None, needs, None));
        }
        let xs: Vec<&Tensor<R>> = ids.iter().map(|&i| self.nodes[i].value.as_ref()).collect();
        let (y, aux) = forward(&op, &xs)?;
        let needs = ids.iter().any(|&i| self.nodes[i].needs_grad);
        Ok(self.push(Arc::new(y), Some(op), ids, aux, needs, None))
    }
}

impl<R> Graph<'_, R> {
    pub fn param_of(&self, v: Var) -> Option<ParamId> {
        self.nodes[v.0].param
    }
}
