//! One op set, two executors: `Eager` computes values only, `Graph` records
//! a tape for reverse-mode differentiation. Model code is written once
//! against `Backend`.

use std::sync::Arc;

use super::ops::{self, SeqLayout};
use super::params::{ParamId, ParamStore};
use super::real::Real;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Label attached to a backward pass, consumed by selective barriers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LossRoot {
    AutoEncoding,
    AutoRegression,
}

#[derive(Clone, Debug)]
pub enum Op<R> {
    Matmul,
    MatmulNt,
    Add,
    Sub,
    Mul,
    AddRow,
    Scale(R),
    AddScalar(R),
    Exp,
    Log,
    Gelu,
    Relu,
    Maximum,
    SumAll,
    MeanAll,
    SumCols,
    Softmax(Option<Vec<bool>>),
    LogSoftmax(Option<Vec<bool>>),
    LayerNorm,
    /// Output row `r` is row `rows[r]` of input `r`.
    Gather(Vec<usize>),
    ConcatCols,
    Reshape(Vec<usize>),
    Pick(Vec<usize>),
    SegSoftmax(Vec<usize>),
    SegWeightedSum(Vec<usize>),
    Attention(SeqLayout),
    StopGradient,
    Barrier(LossRoot),
}

/// Forward state kept for the backward pass beyond the output value.
#[derive(Clone, Debug, Default)]
pub enum Aux<R> {
    #[default]
    None,
    Norm { means: Vec<R>, rstds: Vec<R> },
    Probs(Vec<R>),
}

fn arity<R>(op: &Op<R>, n: usize) -> Result<()> {
    let want = match op {
        Op::Matmul
        | Op::MatmulNt
        | Op::Add
        | Op::Sub
        | Op::Mul
        | Op::AddRow
        | Op::Maximum
        | Op::SegWeightedSum(_) => Some(2),
        Op::LayerNorm | Op::Attention(_) => Some(3),
        Op::Gather(rows) => Some(rows.len()),
        Op::ConcatCols => None,
        _ => Some(1),
    };
    match want {
        Some(w) if w != n => Err(Error::shape(op_name(op), format!("expected {w} inputs, got {n}"))),
        None if n == 0 => Err(Error::shape(op_name(op), "no inputs")),
        _ => Ok(()),
    }
}

pub fn op_name<R>(op: &Op<R>) -> &'static str {
    match op {
        Op::Matmul => "matmul",
        Op::MatmulNt => "matmul_nt",
        Op::Add => "add",
        Op::Sub => "sub",
        Op::Mul => "mul",
        Op::AddRow => "add_row",
        Op::Scale(_) => "scale",
        Op::AddScalar(_) => "add_scalar",
        Op::Exp => "exp",
        Op::Log => "log",
        Op::Gelu => "gelu",
        Op::Relu => "relu",
        Op::Maximum => "maximum",
        Op::SumAll => "sum_all",
        Op::MeanAll => "mean_all",
        Op::SumCols => "sum_cols",
        Op::Softmax(_) => "softmax",
        Op::LogSoftmax(_) => "log_softmax",
        Op::LayerNorm => "layer_norm",
        Op::Gather(_) => "gather",
        Op::ConcatCols => "concat_cols",
        Op::Reshape(_) => "reshape",
        Op::Pick(_) => "pick",
        Op::SegSoftmax(_) => "seg_softmax",
        Op::SegWeightedSum(_) => "seg_weighted_sum",
        Op::Attention(_) => "attention",
        Op::StopGradient => "stop_gradient",
        Op::Barrier(_) => "barrier",
    }
}

/// Evaluates one op on concrete inputs.
pub fn forward<R: Real>(op: &Op<R>, xs: &[&Tensor<R>]) -> Result<(Tensor<R>, Aux<R>)> {
    arity(op, xs.len())?;
    let plain = |t: Tensor<R>| Ok((t, Aux::None));
    match op {
        Op::Matmul => plain(ops::matmul(xs[0], xs[1])?),
        Op::MatmulNt => plain(ops::matmul_nt(xs[0], xs[1])?),
        Op::Add => plain(ops::zip("add", xs[0], xs[1], |a, b| a + b)?),
        Op::Sub => plain(ops::zip("sub", xs[0], xs[1], |a, b| a - b)?),
        Op::Mul => plain(ops::zip("mul", xs[0], xs[1], |a, b| a * b)?),
        Op::Maximum => plain(ops::zip("maximum", xs[0], xs[1], |a, b| if a >= b { a } else { b })?),
        Op::AddRow => plain(ops::add_row(xs[0], xs[1])?),
        Op::Scale(c) => plain(ops::map(xs[0], |x| x * *c)),
        Op::AddScalar(c) => plain(ops::map(xs[0], |x| x + *c)),
        Op::Exp => plain(ops::map(xs[0], |x| x.exp())),
        Op::Log => plain(ops::map(xs[0], |x| x.ln())),
        Op::Gelu => plain(ops::map(xs[0], ops::gelu)),
        Op::Relu => plain(ops::map(xs[0], |x| x.max(R::zero()))),
        Op::SumAll => plain(Tensor::scalar(xs[0].data().iter().copied().sum())),
        Op::MeanAll => {
            let n = R::of(xs[0].len() as f64);
            plain(Tensor::scalar(xs[0].data().iter().copied().sum::<R>() / n))
        }
        Op::SumCols => plain(ops::sum_cols(xs[0])),
        Op::Softmax(mask) => plain(ops::softmax_rows(xs[0], mask.as_deref())?),
        Op::LogSoftmax(mask) => plain(ops::log_softmax_rows(xs[0], mask.as_deref())?),
        Op::LayerNorm => {
            let (y, means, rstds) = ops::layer_norm(xs[0], xs[1], xs[2])?;
            Ok((y, Aux::Norm { means, rstds }))
        }
        Op::Gather(rows) => {
            let src: Vec<_> = xs.iter().copied().zip(rows.iter().copied()).collect();
            plain(ops::gather(&src)?)
        }
        Op::ConcatCols => plain(ops::concat_cols(xs)?),
        Op::Reshape(shape) => plain(xs[0].clone().reshaped(shape.clone())?),
        Op::Pick(idx) => plain(ops::pick(xs[0], idx)?),
        Op::SegSoftmax(segs) => plain(ops::seg_softmax(xs[0], segs)?),
        Op::SegWeightedSum(segs) => plain(ops::seg_weighted_sum(xs[0], xs[1], segs)?),
        Op::Attention(lay) => {
            let (y, p) = ops::attention(xs[0], xs[1], xs[2], *lay)?;
            Ok((y, Aux::Probs(p)))
        }
        Op::StopGradient | Op::Barrier(_) => plain(xs[0].clone()),
    }
}

pub trait Backend<R: Real> {
    type T: Clone;

    fn store(&self) -> &ParamStore<R>;
    fn value<'a>(&'a self, t: &'a Self::T) -> &'a Tensor<R>;
    fn constant(&mut self, t: Tensor<R>) -> Self::T;
    fn param(&mut self, id: ParamId) -> Self::T;
    fn apply(&mut self, op: Op<R>, inputs: &[&Self::T]) -> Result<Self::T>;

    fn matmul(&mut self, a: &Self::T, b: &Self::T) -> Result<Self::T> {
        self.apply(Op::Matmul, &[a, b])
    }
    /// `a * b^T`.
    fn matmul_nt(&mut self, a: &Self::T, b: &Self::T) -> Result<Self::T> {
        self.apply(Op::MatmulNt, &[a, b])
    }
    fn add(&mut self, a: &Self::T, b: &Self::T) -> Result<Self::T> {
        self.apply(Op::Add, &[a, b])
    }
    fn sub(&mut self, a: &Self::T, b: &Self::T) -> Result<Self::T> {
        self.apply(Op::Sub, &[a, b])
    }
    fn mul(&mut self, a: &Self::T, b: &Self::T) -> Result<Self::T> {
        self.apply(Op::Mul, &[a, b])
    }
    fn maximum(&mut self, a: &Self::T, b: &Self::T) -> Result<Self::T> {
        self.apply(Op::Maximum, &[a, b])
    }
    /// Adds a row vector to every row of `x`.
    fn add_row(&mut self, x: &Self::T, b: &Self::T) -> Result<Self::T> {
        self.apply(Op::AddRow, &[x, b])
    }
    fn scale(&mut self, x: &Self::T, c: f64) -> Result<Self::T> {
        self.apply(Op::Scale(R::of(c)), &[x])
    }
    fn add_scalar(&mut self, x: &Self::T, c: f64) -> Result<Self::T> {
        self.apply(Op::AddScalar(R::of(c)), &[x])
    }
    fn exp(&mut self, x: &Self::T) -> Result<Self::T> {
        self.apply(Op::Exp, &[x])
    }
    fn log(&mut self, x: &Self::T) -> Result<Self::T> {
        self.apply(Op::Log, &[x])
    }
    fn gelu(&mut self, x: &Self::T) -> Result<Self::T> {
        self.apply(Op::Gelu, &[x])
    }
    fn relu(&mut self, x: &Self::T) -> Result<Self::T> {
        self.apply(Op::Relu, &[x])
    }
    fn sum_all(&mut self, x: &Self::T) -> Result<Self::T> {
        self.apply(Op::SumAll, &[x])
    }
    fn mean_all(&mut self, x: &Self::T) -> Result<Self::T> {
        self.apply(Op::MeanAll, &[x])
    }
    /// Row sums as a `[rows, 1]` column.
    fn sum_cols(&mut self, x: &Self::T) -> Result<Self::T> {
        self.apply(Op::SumCols, &[x])
    }
    fn softmax(&mut self, x: &Self::T, mask: Option<Vec<bool>>) -> Result<Self::T> {
        self.apply(Op::Softmax(mask), &[x])
    }
    fn log_softmax(&mut self, x: &Self::T, mask: Option<Vec<bool>>) -> Result<Self::T> {
        self.apply(Op::LogSoftmax(mask), &[x])
    }
    fn layer_norm(&mut self, x: &Self::T, gamma: &Self::T, beta: &Self::T) -> Result<Self::T> {
        self.apply(Op::LayerNorm, &[x, gamma, beta])
    }
    fn gather(&mut self, src: &[(&Self::T, usize)]) -> Result<Self::T> {
        let inputs: Vec<&Self::T> = src.iter().map(|(t, _)| *t).collect();
        let rows = src.iter().map(|(_, r)| *r).collect();
        self.apply(Op::Gather(rows), &inputs)
    }
    /// Selects rows of a single tensor.
    fn select_rows(&mut self, x: &Self::T, rows: &[usize]) -> Result<Self::T> {
        let inputs = vec![x; rows.len()];
        self.apply(Op::Gather(rows.to_vec()), &inputs)
    }
    fn concat_cols(&mut self, parts: &[&Self::T]) -> Result<Self::T> {
        self.apply(Op::ConcatCols, parts)
    }
    fn reshape(&mut self, x: &Self::T, shape: &[usize]) -> Result<Self::T> {
        self.apply(Op::Reshape(shape.to_vec()), &[x])
    }
    /// `out[r] = x[r, idx[r]]` as a `[rows, 1]` column.
    fn pick(&mut self, x: &Self::T, idx: &[usize]) -> Result<Self::T> {
        self.apply(Op::Pick(idx.to_vec()), &[x])
    }
    fn seg_softmax(&mut self, x: &Self::T, segs: &[usize]) -> Result<Self::T> {
        self.apply(Op::SegSoftmax(segs.to_vec()), &[x])
    }
    fn seg_weighted_sum(&mut self, w: &Self::T, v: &Self::T, segs: &[usize]) -> Result<Self::T> {
        self.apply(Op::SegWeightedSum(segs.to_vec()), &[w, v])
    }
    fn attention(
        &mut self,
        q: &Self::T,
        k: &Self::T,
        v: &Self::T,
        lay: SeqLayout,
    ) -> Result<Self::T> {
        self.apply(Op::Attention(lay), &[q, k, v])
    }
    fn stop_gradient(&mut self, x: &Self::T) -> Result<Self::T> {
        self.apply(Op::StopGradient, &[x])
    }
    /// Identity forward; blocks the gradient during the backward pass
    /// labelled `blocked`.
    fn barrier(&mut self, x: &Self::T, blocked: LossRoot) -> Result<Self::T> {
        self.apply(Op::Barrier(blocked), &[x])
    }
    /// Row `ids[r]` of a parameter matrix for each `r`.
    fn embed(&mut self, table: ParamId, ids: &[usize]) -> Result<Self::T> {
        let t = self.param(table);
        self.select_rows(&t, ids)
    }
    fn scalar_value(&self, x: &Self::T) -> f64 {
        self.value(x).data()[0].f64()
    }
}

/// Value-only executor used for inference and benchmarks.
pub struct Eager<'s, R> {
    store: &'s ParamStore<R>,
}

impl<'s, R: Real> Eager<'s, R> {
    pub fn new(store: &'s ParamStore<R>) -> Self {
        Eager { store }
    }
}

impl<R: Real> Backend<R> for Eager<'_, R> {
    type T = Arc<Tensor<R>>;

    fn store(&self) -> &ParamStore<R> {
        self.store
    }

    fn value<'a>(&'a self, t: &'a Self::T) -> &'a Tensor<R> {
        t
    }

    fn constant(&mut self, t: Tensor<R>) -> Self::T {
        Arc::new(t)
    }

    fn param(&mut self, id: ParamId) -> Self::T {
        self.store.arc(id)
    }

    fn apply(&mut self, op: Op<R>, inputs: &[&Self::T]) -> Result<Self::T> {
        if matches!(op, Op::StopGradient | Op::Barrier(_)) && inputs.len() == 1 {
            return Ok(Arc::clone(inputs[0]));
        }
        let xs: Vec<&Tensor<R>> = inputs.iter().map(|t| t.as_ref()).collect();
        let (y, _) = forward(&op, &xs)?;
        Ok(Arc::new(y))
    }
}
