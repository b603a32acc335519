//! Raw slice kernels shared by forward and backward passes.

use super::Scalar;

/// `[m, k] @ [k, n]`, both row-major.
pub(crate) fn matmul<F: Scalar>(a: &[F], b: &[F], m: usize, k: usize, n: usize) -> Vec<F> {
    let mut c = vec![F::zero(); m * n];
    F::gemm(m, k, n, a, k as isize, 1, b, n as isize, 1, F::zero(), &mut c);
    c
}

/// `[m, k] @ [n, k]^T`.
pub(crate) fn matmul_nt<F: Scalar>(a: &[F], b: &[F], m: usize, k: usize, n: usize) -> Vec<F> {
    let mut c = vec![F::zero(); m * n];
    F::gemm(m, k, n, a, k as isize, 1, b, 1, k as isize, F::zero(), &mut c);
    c
}

/// `[k, m]^T @ [k, n]`.
pub(crate) fn matmul_tn<F: Scalar>(a: &[F], b: &[F], m: usize, k: usize, n: usize) -> Vec<F> {
    let mut c = vec![F::zero(); m * n];
    F::gemm(m, k, n, a, 1, m as isize, b, n as isize, 1, F::zero(), &mut c);
    c
}

pub(crate) fn softmax_rows<F: Scalar>(x: &[F], d: usize) -> Vec<F> {
    let mut out = x.to_vec();
    for row in out.chunks_mut(d) {
        softmax_in_place(row);
    }
    out
}

pub(crate) fn softmax_in_place<F: Scalar>(row: &mut [F]) {
    let max = row.iter().copied().fold(F::neg_infinity(), F::max);
    let mut sum = F::zero();
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    let inv = sum.recip();
    for x in row.iter_mut() {
        *x *= inv;
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// `tanh` through one `exp`; saturates to +-1 without overflow to NaN.
#[inline]
fn tanh_exp<F: Scalar>(u: F) -> F {
    let two = F::one() + F::one();
    F::one() - two / ((two * u).exp() + F::one())
}

pub(crate) fn gelu<F: Scalar>(x: F) -> F {
    let c = F::from_f64_lossy(GELU_C);
    let a = F::from_f64_lossy(GELU_A);
    let half = F::from_f64_lossy(0.5);
    half * x * (F::one() + tanh_exp(c * (x + a * x * x * x)))
}

pub(crate) fn gelu_grad<F: Scalar>(x: F) -> F {
    let c = F::from_f64_lossy(GELU_C);
    let a = F::from_f64_lossy(GELU_A);
    let half = F::from_f64_lossy(0.5);
    let three = F::from_f64_lossy(3.0);
    let u = c * (x + a * x * x * x);
    let th = tanh_exp(u);
    let du = c * (F::one() + three * a * x * x);
    half * (F::one() + th) + half * x * (F::one() - th * th) * du
}

pub(crate) const LAYER_NORM_EPS: f64 = 1e-5;

/// Normalise each row to zero mean and unit variance. Returns the output
/// and the per-row inverse standard deviation.
pub(crate) fn layer_norm<F: Scalar>(x: &[F], d: usize) -> (Vec<F>, Vec<F>) {
    let eps = F::from_f64_lossy(LAYER_NORM_EPS);
    let inv_d = F::from_usize(d).unwrap().recip();
    let rows = x.len() / d;
    let mut out = vec![F::zero(); x.len()];
    let mut inv_std = Vec::with_capacity(rows);
    for (src, dst) in x.chunks(d).zip(out.chunks_mut(d)) {
        let mean = src.iter().copied().sum::<F>() * inv_d;
        let var = src.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() * inv_d;
        let is = (var + eps).sqrt().recip();
        for (o, &v) in dst.iter_mut().zip(src) {
            *o = (v - mean) * is;
        }
        inv_std.push(is);
    }
    (out, inv_std)
}

/// Multi-head scaled dot-product attention over `batch` independent
/// sequences. `q` is `[batch * lq, d]`, `k` and `v` are `[batch * lk, d]`.
/// Returns the output `[batch * lq, d]` and the attention probabilities
/// laid out as `[batch, heads, lq, lk]`.
pub(crate) fn attention_forward<F: Scalar>(
    q: &[F],
    k: &[F],
    v: &[F],
    batch: usize,
    heads: usize,
    lq: usize,
    lk: usize,
    d: usize,
) -> (Vec<F>, Vec<F>) {
    let dh = d / heads;
    let scale = F::from_usize(dh).unwrap().sqrt().recip();
    let mut out = vec![F::zero(); batch * lq * d];
    let mut probs = vec![F::zero(); batch * heads * lq * lk];
    for b in 0..batch {
        for h in 0..heads {
            let p = &mut probs[(b * heads + h) * lq * lk..][..lq * lk];
            for i in 0..lq {
                let qi = &q[(b * lq + i) * d + h * dh..][..dh];
                let row = &mut p[i * lk..(i + 1) * lk];
                for (j, s) in row.iter_mut().enumerate() {
                    let kj = &k[(b * lk + j) * d + h * dh..][..dh];
                    *s = dot(qi, kj) * scale;
                }
                softmax_in_place(row);
                let oi = &mut out[(b * lq + i) * d + h * dh..][..dh];
                for (j, &pij) in row.iter().enumerate() {
                    let vj = &v[(b * lk + j) * d + h * dh..][..dh];
                    for (o, &vv) in oi.iter_mut().zip(vj) {
                        *o += pij * vv;
                    }
                }
            }
        }
    }
    (out, probs)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn attention_backward<F: Scalar>(
    q: &[F],
    k: &[F],
    v: &[F],
    probs: &[F],
    dout: &[F],
    batch: usize,
    heads: usize,
    lq: usize,
    lk: usize,
    d: usize,
) -> (Vec<F>, Vec<F>, Vec<F>) {
    let dh = d / heads;
    let scale = F::from_usize(dh).unwrap().sqrt().recip();
    let mut dq = vec![F::zero(); q.len()];
    let mut dk = vec![F::zero(); k.len()];
    let mut dv = vec![F::zero(); v.len()];
    let mut dp = vec![F::zero(); lk];
    for b in 0..batch {
        for h in 0..heads {
            let p = &probs[(b * heads + h) * lq * lk..][..lq * lk];
            for i in 0..lq {
                let doi = &dout[(b * lq + i) * d + h * dh..][..dh];
                let pi = &p[i * lk..(i + 1) * lk];
                for j in 0..lk {
                    let off = (b * lk + j) * d + h * dh;
                    dp[j] = dot(doi, &v[off..off + dh]);
                    for (g, &x) in dv[off..off + dh].iter_mut().zip(doi) {
                        *g += pi[j] * x;
                    }
                }
                let inner: F = pi.iter().zip(&dp).map(|(&a, &b)| a * b).sum();
                let qoff = (b * lq + i) * d + h * dh;
                for j in 0..lk {
                    let ds = pi[j] * (dp[j] - inner) * scale;
                    let off = (b * lk + j) * d + h * dh;
                    for t in 0..dh {
                        dq[qoff + t] += ds * k[off + t];
                        dk[off + t] += ds * q[qoff + t];
                    }
                }
            }
        }
    }
    (dq, dk, dv)
}

#[inline]
pub(crate) fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    a.iter().zip(b).fold(F::zero(), |acc, (&x, &y)| acc + x * y)
}
