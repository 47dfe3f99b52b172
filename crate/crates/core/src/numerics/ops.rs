//! Forward kernels shared by the eager and the recording backends.

use super::real::Real;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

fn dims<R: Real>(op: &'static str, t: &Tensor<R>) -> Result<(usize, usize)> {
    if t.shape().len() != 2 {
        return Err(Error::shape(op, format!("expected a matrix, got {:?}", t.shape())));
    }
    Ok((t.shape()[0], t.shape()[1]))
}

fn same_shape<R: Real>(op: &'static str, a: &Tensor<R>, b: &Tensor<R>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

pub fn matmul<R: Real>(a: &Tensor<R>, b: &Tensor<R>) -> Result<Tensor<R>> {
    let (m, k) = dims("matmul", a)?;
    let (k2, n) = dims("matmul", b)?;
    if k != k2 {
        return Err(Error::shape("matmul", format!("{:?} x {:?}", a.shape(), b.shape())));
    }
    let mut out = vec![R::zero(); m * n];
    R::gemm_acc(m, k, n, a.data(), b.data(), &mut out);
    Tensor::new(vec![m, n], out)
}

/// `a * b^T`.
pub fn matmul_nt<R: Real>(a: &Tensor<R>, b: &Tensor<R>) -> Result<Tensor<R>> {
    let (m, k) = dims("matmul_nt", a)?;
    let (n, k2) = dims("matmul_nt", b)?;
    if k != k2 {
        return Err(Error::shape("matmul_nt", format!("{:?} x {:?}^T", a.shape(), b.shape())));
    }
    let mut out = vec![R::zero(); m * n];
    R::gemm_nt_acc(m, k, n, a.data(), b.data(), &mut out);
    Tensor::new(vec![m, n], out)
}

pub fn zip<R: Real>(
    op: &'static str,
    a: &Tensor<R>,
    b: &Tensor<R>,
    f: impl Fn(R, R) -> R,
) -> Result<Tensor<R>> {
    same_shape(op, a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data)
}

pub fn map<R: Real>(a: &Tensor<R>, f: impl Fn(R) -> R) -> Tensor<R> {
    Tensor::new(a.shape().to_vec(), a.data().iter().map(|&x| f(x)).collect()).unwrap()
}

pub fn add_row<R: Real>(x: &Tensor<R>, b: &Tensor<R>) -> Result<Tensor<R>> {
    let n = x.cols();
    if b.len() != n {
        return Err(Error::shape("add_row", format!("{:?} + {:?}", x.shape(), b.shape())));
    }
    let mut out = x.data().to_vec();
    for row in out.chunks_mut(n) {
        for (o, &v) in row.iter_mut().zip(b.data()) {
            *o += v;
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

pub fn gelu<R: Real>(x: R) -> R {
    let c = R::of(GELU_C);
    let a = R::of(GELU_A);
    let half = R::of(0.5);
    half * x * (R::one() + (c * (x + a * x * x * x)).tanh())
}

pub fn gelu_grad<R: Real>(x: R) -> R {
    let c = R::of(GELU_C);
    let a = R::of(GELU_A);
    let half = R::of(0.5);
    let t = (c * (x + a * x * x * x)).tanh();
    half * (R::one() + t) + half * x * (R::one() - t * t) * c * (R::one() + R::of(3.0) * a * x * x)
}

pub fn sum_cols<R: Real>(x: &Tensor<R>) -> Tensor<R> {
    let n = x.cols();
    let data = x.data().chunks(n).map(|r| r.iter().copied().sum()).collect::<Vec<R>>();
    let rows = data.len();
    Tensor::new(vec![rows, 1], data).unwrap()
}

fn check_mask<R: Real>(op: &'static str, x: &Tensor<R>, mask: Option<&[bool]>) -> Result<()> {
    if let Some(m) = mask {
        if m.len() != x.len() {
            return Err(Error::shape(op, format!("mask of {} for {:?}", m.len(), x.shape())));
        }
        for (r, row) in m.chunks(x.cols()).enumerate() {
            if !row.iter().any(|&k| k) {
                return Err(Error::FullyMasked { op, row: r });
            }
        }
    }
    Ok(())
}

/// Row-wise softmax; entries whose mask bit is false receive probability 0.
pub fn softmax_rows<R: Real>(x: &Tensor<R>, mask: Option<&[bool]>) -> Result<Tensor<R>> {
    check_mask("softmax", x, mask)?;
    let n = x.cols();
    let mut out = vec![R::zero(); x.len()];
    for (r, (src, dst)) in x.data().chunks(n).zip(out.chunks_mut(n)).enumerate() {
        let keep = |j: usize| mask.is_none_or(|m| m[r * n + j]);
        let mut mx = R::neg_infinity();
        for (j, &v) in src.iter().enumerate() {
            if keep(j) && v > mx {
                mx = v;
            }
        }
        let mut z = R::zero();
        for (j, (&v, d)) in src.iter().zip(dst.iter_mut()).enumerate() {
            if keep(j) {
                *d = (v - mx).exp();
                z += *d;
            }
        }
        for d in dst.iter_mut() {
            *d /= z;
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

/// Row-wise log-softmax; masked entries are `-inf`.
pub fn log_softmax_rows<R: Real>(x: &Tensor<R>, mask: Option<&[bool]>) -> Result<Tensor<R>> {
    check_mask("log_softmax", x, mask)?;
    let n = x.cols();
    let mut out = vec![R::neg_infinity(); x.len()];
    for (r, (src, dst)) in x.data().chunks(n).zip(out.chunks_mut(n)).enumerate() {
        let keep = |j: usize| mask.is_none_or(|m| m[r * n + j]);
        let mut mx = R::neg_infinity();
        for (j, &v) in src.iter().enumerate() {
            if keep(j) && v > mx {
                mx = v;
            }
        }
        let mut z = R::zero();
        for (j, &v) in src.iter().enumerate() {
            if keep(j) {
                z += (v - mx).exp();
            }
        }
        let lz = mx + z.ln();
        for (j, (&v, d)) in src.iter().zip(dst.iter_mut()).enumerate() {
            if keep(j) {
                *d = v - lz;
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

/// Layer normalization over the last axis. Returns the output and the
/// per-row `(mean, 1/std)` statistics.
pub fn layer_norm<R: Real>(
    x: &Tensor<R>,
    gamma: &Tensor<R>,
    beta: &Tensor<R>,
) -> Result<(Tensor<R>, Vec<R>, Vec<R>)> {
    let n = x.cols();
    if gamma.len() != n || beta.len() != n {
        return Err(Error::shape(
            "layer_norm",
            format!("x {:?}, gamma {:?}, beta {:?}", x.shape(), gamma.shape(), beta.shape()),
        ));
    }
    let rows = x.rows();
    let mut out = vec![R::zero(); x.len()];
    let mut means = Vec::with_capacity(rows);
    let mut rstds = Vec::with_capacity(rows);
    let nf = R::of(n as f64);
    for (src, dst) in x.data().chunks(n).zip(out.chunks_mut(n)) {
        let mean = src.iter().copied().sum::<R>() / nf;
        let var = src.iter().map(|&v| (v - mean) * (v - mean)).sum::<R>() / nf;
        let rstd = R::one() / (var + R::of(LN_EPS)).sqrt();
        for j in 0..n {
            dst[j] = (src[j] - mean) * rstd * gamma.data()[j] + beta.data()[j];
        }
        means.push(mean);
        rstds.push(rstd);
    }
    Ok((Tensor::new(x.shape().to_vec(), out)?, means, rstds))
}

pub fn gather<R: Real>(sources: &[(&Tensor<R>, usize)]) -> Result<Tensor<R>> {
    let Some((first, _)) = sources.first() else {
        return Err(Error::shape("gather", "no sources"));
    };
    let n = first.cols();
    let mut out = Vec::with_capacity(sources.len() * n);
    for (t, r) in sources {
        if t.cols() != n || *r >= t.rows() {
            return Err(Error::shape(
                "gather",
                format!("row {} of {:?} into width {}", r, t.shape(), n),
            ));
        }
        out.extend_from_slice(t.row_slice(*r));
    }
    Tensor::new(vec![sources.len(), n], out)
}

pub fn concat_cols<R: Real>(parts: &[&Tensor<R>]) -> Result<Tensor<R>> {
    let Some(first) = parts.first() else {
        return Err(Error::shape("concat_cols", "no inputs"));
    };
    let rows = first.rows();
    if parts.iter().any(|p| p.rows() != rows) {
        let shapes: Vec<_> = parts.iter().map(|p| p.shape().to_vec()).collect();
        return Err(Error::shape("concat_cols", format!("{shapes:?}")));
    }
    let total: usize = parts.iter().map(|p| p.cols()).sum();
    let mut out = Vec::with_capacity(rows * total);
    for r in 0..rows {
        for p in parts {
            out.extend_from_slice(p.row_slice(r));
        }
    }
    Tensor::new(vec![rows, total], out)
}

pub fn pick<R: Real>(x: &Tensor<R>, idx: &[usize]) -> Result<Tensor<R>> {
    let n = x.cols();
    if idx.len() != x.rows() || idx.iter().any(|&i| i >= n) {
        return Err(Error::shape("pick", format!("{} indices into {:?}", idx.len(), x.shape())));
    }
    let data = idx.iter().enumerate().map(|(r, &i)| x.data()[r * n + i]).collect();
    Tensor::new(vec![idx.len(), 1], data)
}

fn check_segments(op: &'static str, total: usize, segs: &[usize]) -> Result<()> {
    if segs.iter().sum::<usize>() != total || segs.contains(&0) {
        return Err(Error::shape(op, format!("segments {segs:?} over {total} rows")));
    }
    Ok(())
}

/// Softmax of a column vector within consecutive segments.
pub fn seg_softmax<R: Real>(x: &Tensor<R>, segs: &[usize]) -> Result<Tensor<R>> {
    if x.cols() != 1 {
        return Err(Error::shape("seg_softmax", format!("expected [P, 1], got {:?}", x.shape())));
    }
    check_segments("seg_softmax", x.len(), segs)?;
    let mut out = vec![R::zero(); x.len()];
    let mut off = 0;
    for &s in segs {
        let src = &x.data()[off..off + s];
        let dst = &mut out[off..off + s];
        let mx = src.iter().copied().fold(R::neg_infinity(), R::max);
        let mut z = R::zero();
        for (d, &v) in dst.iter_mut().zip(src) {
            *d = (v - mx).exp();
            z += *d;
        }
        for d in dst.iter_mut() {
            *d /= z;
        }
        off += s;
    }
    Tensor::new(vec![x.len(), 1], out)
}

/// `out[c] = sum_{p in segment c} w[p] * v[p]`.
pub fn seg_weighted_sum<R: Real>(w: &Tensor<R>, v: &Tensor<R>, segs: &[usize]) -> Result<Tensor<R>> {
    if w.cols() != 1 || w.len() != v.rows() {
        return Err(Error::shape(
            "seg_weighted_sum",
            format!("weights {:?}, values {:?}", w.shape(), v.shape()),
        ));
    }
    check_segments("seg_weighted_sum", w.len(), segs)?;
    let d = v.cols();
    let mut out = vec![R::zero(); segs.len() * d];
    let mut off = 0;
    for (c, &s) in segs.iter().enumerate() {
        let dst = &mut out[c * d..(c + 1) * d];
        for p in off..off + s {
            let wp = w.data()[p];
            for (o, &x) in dst.iter_mut().zip(v.row_slice(p)) {
                *o += wp * x;
            }
        }
        off += s;
    }
    Tensor::new(vec![segs.len(), d], out)
}

/// Layout of a batched sequence stored as `[batch * len, width]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SeqLayout {
    pub batch: usize,
    pub len: usize,
    pub heads: usize,
    pub causal: bool,
}

/// Multi-head scaled dot-product attention. Returns the output and the
/// attention probabilities `[batch, heads, len, len]` (zero above the
/// diagonal when causal).
pub fn attention<R: Real>(
    q: &Tensor<R>,
    k: &Tensor<R>,
    v: &Tensor<R>,
    lay: SeqLayout,
) -> Result<(Tensor<R>, Vec<R>)> {
    let width = q.cols();
    let rows = lay.batch * lay.len;
    if q.shape() != k.shape()
        || q.shape() != v.shape()
        || q.rows() != rows
        || lay.heads == 0
        || !width.is_multiple_of(lay.heads)
    {
        return Err(Error::shape(
            "attention",
            format!("q {:?} k {:?} v {:?} layout {:?}", q.shape(), k.shape(), v.shape(), lay),
        ));
    }
    let dh = width / lay.heads;
    let scale = R::one() / R::of(dh as f64).sqrt();
    let l = lay.len;
    let mut probs = vec![R::zero(); lay.batch * lay.heads * l * l];
    let mut out = vec![R::zero(); rows * width];
    let (qd, kd, vd) = (q.data(), k.data(), v.data());
    let mut scores = vec![R::zero(); l];
    for b in 0..lay.batch {
        for h in 0..lay.heads {
            let off = h * dh;
            for i in 0..l {
                let qi = &qd[(b * l + i) * width + off..][..dh];
                let upto = if lay.causal { i + 1 } else { l };
                let mut mx = R::neg_infinity();
                for j in 0..upto {
                    let kj = &kd[(b * l + j) * width + off..][..dh];
                    let s = qi.iter().zip(kj).map(|(&x, &y)| x * y).sum::<R>() * scale;
                    scores[j] = s;
                    if s > mx {
                        mx = s;
                    }
                }
                let mut z = R::zero();
                for s in scores.iter_mut().take(upto) {
                    *s = (*s - mx).exp();
                    z += *s;
                }
                let prow = &mut probs[((b * lay.heads + h) * l + i) * l..][..l];
                let orow = &mut out[(b * l + i) * width + off..][..dh];
                for j in 0..upto {
                    let p = scores[j] / z;
                    prow[j] = p;
                    let vj = &vd[(b * l + j) * width + off..][..dh];
                    for (o, &x) in orow.iter_mut().zip(vj) {
                        *o += p * x;
                    }
                }
            }
        }
    }
    Ok((Tensor::new(vec![rows, width], out)?, probs))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let s = softmax_rows(&t(&[1, 2], &[0.0, 0.0]), None).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_reference_values() {
        let s = softmax_rows(&t(&[1, 3], &[1.0, 2.0, 3.0]), None).unwrap();
        // exp(k) / (e + e^2 + e^3), evaluated directly.
        let z = 1f64.exp() + 2f64.exp() + 3f64.exp();
        let expect = [1f64.exp() / z, 2f64.exp() / z, 3f64.exp() / z];
        for (a, b) in s.data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        for (a, b) in s.data().iter().zip([0.09003, 0.24473, 0.66524]) {
            assert!((a - b).abs() < 5e-6);
        }
    }

    #[test]
    fn fully_masked_row_is_an_error() {
        let x = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let err = softmax_rows(&x, Some(&[true, false, false, false])).unwrap_err();
        assert!(matches!(err, Error::FullyMasked { row: 1, .. }));
        let ok = softmax_rows(&x, Some(&[true, false, false, true])).unwrap();
        assert_eq!(ok.data(), &[1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn layer_norm_of_constant_row_returns_beta() {
        let x = t(&[1, 4], &[3.0; 4]);
        let g = t(&[4], &[2.0; 4]);
        let b = t(&[4], &[0.1, 0.2, 0.3, 0.4]);
        let (y, _, _) = layer_norm(&x, &g, &b).unwrap();
        assert_eq!(y.data(), b.data());
    }

    #[test]
    fn matmul_shape_error_names_op() {
        let err = matmul(&t(&[2, 3], &[0.0; 6]), &t(&[2, 3], &[0.0; 6])).unwrap_err();
        assert!(err.to_string().contains("matmul"));
        assert!(err.to_string().contains("[2, 3]"));
    }

    #[test]
    fn transposed_products_agree() {
        let a = t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = t(&[3, 2], &[1.0, -1.0, 0.5, 2.0, -3.0, 0.0]);
        let bt = t(&[2, 3], &[1.0, 0.5, -3.0, -1.0, 2.0, 0.0]);
        assert_eq!(matmul(&a, &b).unwrap(), matmul_nt(&a, &bt).unwrap());
    }

    #[test]
    fn causal_attention_first_row_sees_only_itself() {
        let q = t(&[3, 2], &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let v = t(&[3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let lay = SeqLayout { batch: 1, len: 3, heads: 1, causal: true };
        let (o, p) = attention(&q, &q, &v, lay).unwrap();
        assert_eq!(o.row_slice(0), &[1.0, 2.0]);
        assert_eq!(&p[..3], &[1.0, 0.0, 0.0]);
    }
}
