//! Composition, decomposition and split-score functions.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::parser::TopDownParser;
use crate::error::Result;
use crate::nn::{Block, Linear, Mlp, Norm};
use crate::numerics::{Backend, ParamId, ParamStore, Real};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompositionConfig {
    pub width: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn: usize,
    /// Feature width of the score maps.
    pub score_dim: usize,
    pub parser_layers: usize,
    /// Maximum number of current units a chart cell may span.
    pub window: usize,
    pub max_len: usize,
}

impl Default for CompositionConfig {
    fn default() -> Self {
        CompositionConfig {
            width: 32,
            layers: 1,
            heads: 2,
            ffn: 64,
            score_dim: 32,
            parser_layers: 2,
            window: 3,
            max_len: 128,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CompositionModel {
    pub cfg: CompositionConfig,
    pub left: ParamId,
    pub right: ParamId,
    pub prt: ParamId,
    pub root: ParamId,
    pub alpha: Vec<Block>,
    pub alpha_ln: Norm,
    pub beta: Vec<Block>,
    pub beta_ln: Norm,
    pub phi_al: Mlp,
    pub phi_ar: Mlp,
    pub phi_bp: Mlp,
    pub phi_bl: Mlp,
    pub phi_br: Mlp,
    pub down: Linear,
    pub up: Linear,
    pub parser: TopDownParser,
}

impl CompositionModel {
    pub fn new<R: Real>(
        store: &mut ParamStore<R>,
        cfg: &CompositionConfig,
        gen_width: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let d = cfg.width;
        let role = |s: &mut ParamStore<R>, name: &str, rng: &mut _| s.add_normal(name, &[1, d], 1.0, rng);
        let left = role(store, "comp.role.left", rng)?;
        let right = role(store, "comp.role.right", rng)?;
        let prt = role(store, "comp.role.prt", rng)?;
        let root = role(store, "comp.root", rng)?;
        let blocks = |s: &mut ParamStore<R>, name: &str, rng: &mut _| -> Result<Vec<Block>> {
            (0..cfg.layers)
                .map(|l| Block::new(s, &format!("{name}.{l}"), d, cfg.heads, cfg.ffn, rng))
                .collect()
        };
        let alpha = blocks(store, "comp.alpha", rng)?;
        let beta = blocks(store, "comp.beta", rng)?;
        let alpha_ln = Norm::new(store, "comp.alpha.ln", d)?;
        let beta_ln = Norm::new(store, "comp.beta.ln", d)?;
        let mlp = |s: &mut ParamStore<R>, name: &str, rng: &mut _| {
            Mlp::new(s, name, d, cfg.ffn, cfg.score_dim, rng)
        };
        let phi_al = mlp(store, "comp.phi.al", rng)?;
        let phi_ar = mlp(store, "comp.phi.ar", rng)?;
        let phi_bp = mlp(store, "comp.phi.bp", rng)?;
        let phi_bl = mlp(store, "comp.phi.bl", rng)?;
        let phi_br = mlp(store, "comp.phi.br", rng)?;
        let down = Linear::new(store, "comp.down", gen_width, d, rng)?;
        let up = Linear::new(store, "comp.up", d, gen_width, rng)?;
        let parser = TopDownParser::new(store, cfg, rng)?;
        Ok(CompositionModel {
            cfg: cfg.clone(),
            left,
            right,
            prt,
            root,
            alpha,
            alpha_ln,
            beta,
            beta_ln,
            phi_al,
            phi_ar,
            phi_bp,
            phi_bl,
            phi_br,
            down,
            up,
            parser,
        })
    }

    /// Runs a two-position encoder over each row pair `(a[p], b[p])` and
    /// returns the layer-normalized sum of the two output positions.
    fn pair_encode<R: Real, B: Backend<R>>(
        g: &mut B,
        blocks: &[Block],
        ln: &Norm,
        a: &B::T,
        b: &B::T,
    ) -> Result<B::T> {
        let p = g.value(a).rows();
        let src: Vec<(&B::T, usize)> = (0..p).flat_map(|r| [(a, r), (b, r)]).collect();
        let mut x = g.gather(&src)?;
        for blk in blocks {
            x = blk.forward(g, &x, p, 2, false)?;
        }
        let even: Vec<usize> = (0..p).map(|r| 2 * r).collect();
        let odd: Vec<usize> = (0..p).map(|r| 2 * r + 1).collect();
        let xa = g.select_rows(&x, &even)?;
        let xb = g.select_rows(&x, &odd)?;
        let s = g.add(&xa, &xb)?;
        ln.forward(g, &s)
    }

    /// `f_alpha` over `P` left/right row pairs.
    pub fn compose<R: Real, B: Backend<R>>(&self, g: &mut B, l: &B::T, r: &B::T) -> Result<B::T> {
        let (le, re) = (g.param(self.left), g.param(self.right));
        let a = g.add_row(l, &le)?;
        let b = g.add_row(r, &re)?;
        Self::pair_encode(g, &self.alpha, &self.alpha_ln, &a, &b)
    }

    /// `f_beta` over parent-outside / sibling-inside pairs; `sibling_right[p]`
    /// tells whether the sibling lies to the right of the span.
    pub fn decompose<R: Real, B: Backend<R>>(
        &self,
        g: &mut B,
        parent: &B::T,
        sibling: &B::T,
        sibling_right: &[bool],
    ) -> Result<B::T> {
        let (pe, le, re) = (g.param(self.prt), g.param(self.left), g.param(self.right));
        let a = g.add_row(parent, &pe)?;
        let sr = g.add_row(sibling, &re)?;
        let sl = g.add_row(sibling, &le)?;
        let b = pick_rows(g, &sr, &sl, sibling_right)?;
        Self::pair_encode(g, &self.beta, &self.beta_ln, &a, &b)
    }

    fn bilinear<R: Real, B: Backend<R>>(&self, g: &mut B, x: &B::T, y: &B::T) -> Result<B::T> {
        let m = g.mul(x, y)?;
        let s = g.sum_cols(&m)?;
        g.scale(&s, 1.0 / (self.cfg.score_dim as f64).sqrt())
    }

    /// `phi_alpha` for each row pair, as a `[P, 1]` column.
    pub fn score_alpha<R: Real, B: Backend<R>>(&self, g: &mut B, l: &B::T, r: &B::T) -> Result<B::T> {
        let fl = self.phi_al.forward(g, l)?;
        let fr = self.phi_ar.forward(g, r)?;
        self.bilinear(g, &fl, &fr)
    }

    pub fn score_beta<R: Real, B: Backend<R>>(
        &self,
        g: &mut B,
        parent: &B::T,
        sibling: &B::T,
        sibling_right: &[bool],
    ) -> Result<B::T> {
        let fp = self.phi_bp.forward(g, parent)?;
        let fr = self.phi_br.forward(g, sibling)?;
        let fl = self.phi_bl.forward(g, sibling)?;
        let fs = pick_rows(g, &fr, &fl, sibling_right)?;
        self.bilinear(g, &fp, &fs)
    }
}

/// Row `p` from `a` where `which[p]`, else from `b`.
fn pick_rows<R: Real, B: Backend<R>>(g: &mut B, a: &B::T, b: &B::T, which: &[bool]) -> Result<B::T> {
    if which.iter().all(|&w| w) {
        return Ok(a.clone());
    }
    if which.iter().all(|&w| !w) {
        return Ok(b.clone());
    }
    let src: Vec<(&B::T, usize)> =
        which.iter().enumerate().map(|(p, &w)| (if w { a } else { b }, p)).collect();
    g.gather(&src)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{ops, Eager, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model(seed: u64) -> (ParamStore<f64>, CompositionModel) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let cfg = CompositionConfig { width: 8, ffn: 16, score_dim: 8, ..Default::default() };
        let m = CompositionModel::new(&mut s, &cfg, 12, &mut rng).unwrap();
        (s, m)
    }

    fn vecs(rows: usize, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::new(vec![rows, 8], (0..rows * 8).map(|_| rng.random::<f64>() - 0.5).collect()).unwrap()
    }

    #[test]
    fn composition_is_order_sensitive() {
        let (s, m) = model(1);
        let mut g = Eager::new(&s);
        let (a, b) = (g.constant(vecs(1, 2)), g.constant(vecs(1, 3)));
        let ab = m.compose(&mut g, &a, &b).unwrap();
        let ba = m.compose(&mut g, &b, &a).unwrap();
        let diff: f64 = ab.data().iter().zip(ba.data()).map(|(x, y)| (x - y).abs()).sum();
        assert!(diff > 1e-3);
    }

    #[test]
    fn zero_blocks_reduce_to_normalized_role_sum() {
        let (mut s, m) = model(4);
        let ids: Vec<ParamId> = s
            .iter()
            .filter(|(_, p)| p.name.starts_with("comp.alpha.0.") && !p.name.contains(".ln"))
            .map(|(id, _)| id)
            .collect();
        for id in ids {
            s.value_mut(id).data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
        let (l, r) = (vecs(1, 5), vecs(1, 6));
        let mut g = Eager::new(&s);
        let (lt, rt) = (g.constant(l.clone()), g.constant(r.clone()));
        let out = m.compose(&mut g, &lt, &rt).unwrap();
        let le = s.get(m.left).data();
        let re = s.get(m.right).data();
        let sum: Vec<f64> = (0..8).map(|j| l.data()[j] + le[j] + r.data()[j] + re[j]).collect();
        let expect = ops::layer_norm(&Tensor::row(sum), &Tensor::full(&[8], 1.0), &Tensor::zeros(&[8]))
            .unwrap()
            .0;
        for (a, b) in out.data().iter().zip(expect.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        let mean: f64 = out.data().iter().sum::<f64>() / 8.0;
        let var: f64 = out.data().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 8.0;
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-3);
    }

    #[test]
    fn batched_rows_match_single_pairs() {
        let (s, m) = model(7);
        let mut g = Eager::new(&s);
        let (l, r) = (g.constant(vecs(3, 8)), g.constant(vecs(3, 9)));
        let all = m.compose(&mut g, &l, &r).unwrap();
        let sc = m.score_alpha(&mut g, &l, &r).unwrap();
        for p in 0..3 {
            let lp = g.select_rows(&l, &[p]).unwrap();
            let rp = g.select_rows(&r, &[p]).unwrap();
            let one = m.compose(&mut g, &lp, &rp).unwrap();
            let s1 = m.score_alpha(&mut g, &lp, &rp).unwrap();
            for (a, b) in one.data().iter().zip(all.row_slice(p)) {
                assert!((a - b).abs() < 1e-12);
            }
            assert!((s1.item() - sc.data()[p]).abs() < 1e-12);
        }
    }

    #[test]
    fn scores_are_bilinear_and_deterministic() {
        let (s, m) = model(3);
        let mut g = Eager::new(&s);
        let (l, r) = (g.constant(vecs(2, 1)), g.constant(vecs(2, 2)));
        let a = m.score_alpha(&mut g, &l, &r).unwrap();
        let b = m.score_alpha(&mut g, &l, &r).unwrap();
        assert_eq!(a.data(), b.data());
        let sides = [true, false];
        let p = m.score_beta(&mut g, &l, &r, &sides).unwrap();
        assert!(p.is_finite());
        // Orthogonal features give a zero score.
        let x = Tensor::from_f64(&[1, 4], &[1.0, 0.0, 0.0, 0.0]).unwrap();
        let y = Tensor::from_f64(&[1, 4], &[0.0, 2.0, 0.0, 0.0]).unwrap();
        let (xt, yt) = (g.constant(x), g.constant(y));
        assert_eq!(m.bilinear(&mut g, &xt, &yt).unwrap().item(), 0.0);
        let x2 = g.scale(&xt, 2.0).unwrap();
        let y2 = g.add_scalar(&yt, 1.0).unwrap();
        let base = m.bilinear(&mut g, &xt, &y2).unwrap().item();
        let doubled = {
            let y4 = g.scale(&y2, 2.0).unwrap();
            m.bilinear(&mut g, &x2, &y4).unwrap().item()
        };
        assert!((doubled - 4.0 * base).abs() < 1e-12);
    }
}
