use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::real::Real;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug)]
pub struct Param<R> {
    pub name: String,
    pub value: Arc<Tensor<R>>,
    pub grad: Option<Vec<R>>,
    pub m: Vec<R>,
    pub v: Vec<R>,
}

/// Named trainable parameters plus Adam state.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<R> {
    params: Vec<Param<R>>,
    index: BTreeMap<String, ParamId>,
    step: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm cap; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, clip_norm: None }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum StepOutcome {
    Applied { grad_norm: f64 },
    Skipped { reason: String },
}

/// Per-parameter gradient accumulator, indexed by `ParamId`.
#[derive(Clone, Debug)]
pub struct GradBuffer<R> {
    grads: Vec<Option<Vec<R>>>,
}

impl<R: Real> GradBuffer<R> {
    pub fn new(n: usize) -> Self {
        GradBuffer { grads: vec![None; n] }
    }

    pub fn add(&mut self, id: ParamId, g: &[R], weight: R) {
        let slot = self.grads[id.0].get_or_insert_with(|| vec![R::zero(); g.len()]);
        for (s, &x) in slot.iter_mut().zip(g) {
            *s += weight * x;
        }
    }

    pub fn merge(&mut self, other: &GradBuffer<R>, weight: R) {
        for (i, g) in other.grads.iter().enumerate() {
            if let Some(g) = g {
                self.add(ParamId(i), g, weight);
            }
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&[R]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &[R])> {
        self.grads
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_deref().map(|g| (ParamId(i), g)))
    }
}

impl<R: Real> ParamStore<R> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new(), index: BTreeMap::new(), step: 0 }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<R>) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        let id = ParamId(self.params.len());
        let n = value.len();
        self.params.push(Param {
            name: name.clone(),
            value: Arc::new(value),
            grad: None,
            m: vec![R::zero(); n],
            v: vec![R::zero(); n],
        });
        self.index.insert(name, id);
        Ok(id)
    }

    pub fn add_normal(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        std: f64,
        rng: &mut impl Rng,
    ) -> Result<ParamId> {
        let normal = Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()))?;
        let numel = shape.iter().product();
        let data = (0..numel).map(|_| R::of(normal.sample(rng))).collect();
        self.add(name, Tensor::new(shape.to_vec(), data)?)
    }

    pub fn add_const(&mut self, name: impl Into<String>, shape: &[usize], v: f64) -> Result<ParamId> {
        self.add(name, Tensor::full(shape, R::of(v)))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<R> {
        &self.params[id.0].value
    }

    pub fn arc(&self, id: ParamId) -> Arc<Tensor<R>> {
        Arc::clone(&self.params[id.0].value)
    }

    pub fn param(&self, id: ParamId) -> &Param<R> {
        &self.params[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<R>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<R> {
        Arc::make_mut(&mut self.params[id.0].value)
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn set_step_count(&mut self, step: u64) {
        self.step = step;
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn grad(&self, id: ParamId) -> Option<&[R]> {
        self.params[id.0].grad.as_deref()
    }

    pub fn accumulate(&mut self, grads: &GradBuffer<R>, weight: R) {
        for (id, g) in grads.iter() {
            let p = &mut self.params[id.0];
            let slot = p.grad.get_or_insert_with(|| vec![R::zero(); g.len()]);
            for (s, &x) in slot.iter_mut().zip(g) {
                *s += weight * x;
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .filter_map(|p| p.grad.as_ref())
            .flat_map(|g| g.iter())
            .map(|x| x.f64() * x.f64())
            .sum::<f64>()
            .sqrt()
    }

    /// One Adam update with bias correction. Gradients are cleared either way;
    /// the step is skipped when any gradient is non-finite.
    pub fn adam_step(&mut self, cfg: &AdamConfig) -> StepOutcome {
        let norm = self.grad_norm();
        if !norm.is_finite() {
            self.zero_grad();
            return StepOutcome::Skipped { reason: "non-finite gradient".into() };
        }
        let clip = match cfg.clip_norm {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (R::of(cfg.beta1), R::of(cfg.beta2));
        let bc1 = R::of(1.0 - cfg.beta1.powi(t));
        let bc2 = R::of(1.0 - cfg.beta2.powi(t));
        let (lr, eps, clip) = (R::of(cfg.lr), R::of(cfg.eps), R::of(clip));
        for p in &mut self.params {
            let grad = p.grad.take();
            let value = Arc::make_mut(&mut p.value);
            for i in 0..p.m.len() {
                let g = grad.as_ref().map_or(R::zero(), |g| g[i] * clip);
                p.m[i] = b1 * p.m[i] + (R::one() - b1) * g;
                p.v[i] = b2 * p.v[i] + (R::one() - b2) * g * g;
                let mhat = p.m[i] / bc1;
                let vhat = p.v[i] / bc2;
                value.data_mut()[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        StepOutcome::Applied { grad_norm: norm }
    }

    pub(crate) fn params_mut(&mut self) -> &mut Vec<Param<R>> {
        &mut self.params
    }

    pub fn cast<S: Real>(&self) -> ParamStore<S> {
        let params = self
            .params
            .iter()
            .map(|p| Param {
                name: p.name.clone(),
                value: Arc::new(p.value.cast()),
                grad: None,
                m: p.m.iter().map(|x| S::of(x.f64())).collect(),
                v: p.v.iter().map(|x| S::of(x.f64())).collect(),
            })
            .collect();
        ParamStore { params, index: self.index.clone(), step: self.step }
    }
}
