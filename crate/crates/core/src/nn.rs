//! Layers shared by the composition model and the generator.

use std::sync::Arc;

use rand::Rng;

use crate::error::Result;
use crate::numerics::{ops, Backend, ParamId, ParamStore, Real, SeqLayout, Tensor};

#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new<R: Real>(
        store: &mut ParamStore<R>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let std = 1.0 / (fan_in as f64).sqrt();
        let w = store.add_normal(format!("{name}.w"), &[fan_in, fan_out], std, rng)?;
        let b = store.add_const(format!("{name}.b"), &[fan_out], 0.0)?;
        Ok(Linear { w, b, fan_in, fan_out })
    }

    pub fn forward<R: Real, B: Backend<R>>(&self, g: &mut B, x: &B::T) -> Result<B::T> {
        let w = g.param(self.w);
        let b = g.param(self.b);
        let y = g.matmul(x, &w)?;
        g.add_row(&y, &b)
    }

    pub fn apply<R: Real>(&self, store: &ParamStore<R>, x: &Tensor<R>) -> Result<Tensor<R>> {
        let y = ops::matmul(x, store.get(self.w))?;
        ops::add_row(&y, store.get(self.b))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Norm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl Norm {
    pub fn new<R: Real>(store: &mut ParamStore<R>, name: &str, width: usize) -> Result<Self> {
        let gamma = store.add_const(format!("{name}.g"), &[width], 1.0)?;
        let beta = store.add_const(format!("{name}.b"), &[width], 0.0)?;
        Ok(Norm { gamma, beta })
    }

    pub fn forward<R: Real, B: Backend<R>>(&self, g: &mut B, x: &B::T) -> Result<B::T> {
        let ga = g.param(self.gamma);
        let be = g.param(self.beta);
        g.layer_norm(x, &ga, &be)
    }

    pub fn apply<R: Real>(&self, store: &ParamStore<R>, x: &Tensor<R>) -> Result<Tensor<R>> {
        Ok(ops::layer_norm(x, store.get(self.gamma), store.get(self.beta))?.0)
    }
}

/// Linear, GELU, Linear.
#[derive(Clone, Copy, Debug)]
pub struct Mlp {
    pub l1: Linear,
    pub l2: Linear,
}

impl Mlp {
    pub fn new<R: Real>(
        store: &mut ParamStore<R>,
        name: &str,
        fan_in: usize,
        hidden: usize,
        fan_out: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Mlp {
            l1: Linear::new(store, &format!("{name}.l1"), fan_in, hidden, rng)?,
            l2: Linear::new(store, &format!("{name}.l2"), hidden, fan_out, rng)?,
        })
    }

    pub fn forward<R: Real, B: Backend<R>>(&self, g: &mut B, x: &B::T) -> Result<B::T> {
        let h = self.l1.forward(g, x)?;
        let h = g.gelu(&h)?;
        self.l2.forward(g, &h)
    }

    pub fn apply<R: Real>(&self, store: &ParamStore<R>, x: &Tensor<R>) -> Result<Tensor<R>> {
        let h = self.l1.apply(store, x)?;
        self.l2.apply(store, &ops::map(&h, ops::gelu))
    }
}

/// Pre-LN transformer block.
#[derive(Clone, Copy, Debug)]
pub struct Block {
    pub ln1: Norm,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub ln2: Norm,
    pub ffn: Mlp,
    pub heads: usize,
}

/// Keys and values of one layer for the positions seen so far. Entries are
/// shared between hypotheses; appending never mutates an existing chain.
#[derive(Debug)]
pub struct KvNode<R> {
    pub k: Vec<R>,
    pub v: Vec<R>,
    pub prev: Option<Arc<KvNode<R>>>,
}

pub type KvCache<R> = Option<Arc<KvNode<R>>>;

impl Block {
    pub fn new<R: Real>(
        store: &mut ParamStore<R>,
        name: &str,
        width: usize,
        heads: usize,
        ffn: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Block {
            ln1: Norm::new(store, &format!("{name}.ln1"), width)?,
            q: Linear::new(store, &format!("{name}.q"), width, width, rng)?,
            k: Linear::new(store, &format!("{name}.k"), width, width, rng)?,
            v: Linear::new(store, &format!("{name}.v"), width, width, rng)?,
            o: Linear::new(store, &format!("{name}.o"), width, width, rng)?,
            ln2: Norm::new(store, &format!("{name}.ln2"), width)?,
            ffn: Mlp::new(store, &format!("{name}.ffn"), width, ffn, width, rng)?,
            heads,
        })
    }

    pub fn forward<R: Real, B: Backend<R>>(
        &self,
        g: &mut B,
        x: &B::T,
        batch: usize,
        len: usize,
        causal: bool,
    ) -> Result<B::T> {
        let h = self.ln1.forward(g, x)?;
        let q = self.q.forward(g, &h)?;
        let k = self.k.forward(g, &h)?;
        let v = self.v.forward(g, &h)?;
        let lay = SeqLayout { batch, len, heads: self.heads, causal };
        let a = g.attention(&q, &k, &v, lay)?;
        let a = self.o.forward(g, &a)?;
        let x = g.add(x, &a)?;
        let h = self.ln2.forward(g, &x)?;
        let f = self.ffn.forward(g, &h)?;
        g.add(&x, &f)
    }

    /// Causal step for one new position given the cache of earlier ones.
    /// Returns the output row and the extended cache.
    pub fn step<R: Real>(
        &self,
        store: &ParamStore<R>,
        x: &Tensor<R>,
        cache: &KvCache<R>,
    ) -> Result<(Tensor<R>, KvCache<R>)> {
        let h = self.ln1.apply(store, x)?;
        let q = self.q.apply(store, &h)?;
        let k = self.k.apply(store, &h)?;
        let v = self.v.apply(store, &h)?;
        let node = Arc::new(KvNode {
            k: k.into_data(),
            v: v.into_data(),
            prev: cache.clone(),
        });
        let width = x.cols();
        let dh = width / self.heads;
        let scale = R::one() / R::of(dh as f64).sqrt();
        let mut out = vec![R::zero(); width];
        for head in 0..self.heads {
            let off = head * dh;
            let qh = &q.data()[off..off + dh];
            let mut scores = Vec::new();
            let mut cur = Some(&node);
            while let Some(n) = cur {
                let s = qh.iter().zip(&n.k[off..off + dh]).map(|(&a, &b)| a * b).sum::<R>() * scale;
                scores.push((s, n));
                cur = n.prev.as_ref();
            }
            let mx = scores.iter().map(|(s, _)| *s).fold(R::neg_infinity(), R::max);
            let z: R = scores.iter().map(|(s, _)| (*s - mx).exp()).sum();
            for (s, n) in &scores {
                let p = (*s - mx).exp() / z;
                for (o, &vv) in out[off..off + dh].iter_mut().zip(&n.v[off..off + dh]) {
                    *o += p * vv;
                }
            }
        }
        let a = self.o.apply(store, &Tensor::row(out))?;
        let x = ops::zip("add", x, &a, |p, q| p + q)?;
        let h = self.ln2.apply(store, &x)?;
        let f = self.ffn.apply(store, &h)?;
        Ok((ops::zip("add", &x, &f, |p, q| p + q)?, Some(node)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{Eager, Graph};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn incremental_steps_match_parallel_causal_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut s = ParamStore::<f64>::new();
        let blk = Block::new(&mut s, "b", 8, 2, 16, &mut rng).unwrap();
        let x = Tensor::from_f64(&[5, 8], &(0..40).map(|i| ((i * 37) % 11) as f64 / 7.0 - 0.7).collect::<Vec<_>>())
            .unwrap();
        let mut e = Eager::new(&s);
        let xt = e.constant(x.clone());
        let full = blk.forward(&mut e, &xt, 1, 5, true).unwrap();
        let mut cache = None;
        for t in 0..5 {
            let (y, c) = blk.step(&s, &Tensor::row(x.row_slice(t).to_vec()), &cache).unwrap();
            cache = c;
            for (a, b) in y.data().iter().zip(full.row_slice(t)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn eager_and_graph_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut s = ParamStore::<f64>::new();
        let blk = Block::new(&mut s, "b", 4, 1, 8, &mut rng).unwrap();
        let x = Tensor::from_f64(&[3, 4], &[0.1, 0.2, -0.3, 0.5, 1.0, 0.0, 0.3, -1.0, 0.7, 0.7, 0.1, 0.2]).unwrap();
        let mut e = Eager::new(&s);
        let xe = e.constant(x.clone());
        let ye = blk.forward(&mut e, &xe, 1, 3, false).unwrap();
        let mut g = Graph::new(&s);
        let xg = g.constant(x);
        let yg = blk.forward(&mut g, &xg, 1, 3, false).unwrap();
        assert_eq!(ye.as_ref(), g.value(&yg));
    }
}
