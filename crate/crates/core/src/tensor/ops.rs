//! Forward definitions of the differentiable operator catalogue.

use super::graph::{Graph, Op, Var};
use super::kernels;
use super::{Result, Scalar, Tensor, TensorError};

fn shape_err<T>(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Result<T> {
    Err(TensorError::Shape {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    })
}

fn invalid<T>(op: &'static str, msg: impl Into<String>) -> Result<T> {
    Err(TensorError::Invalid {
        op,
        msg: msg.into(),
    })
}

impl<F: Scalar> Graph<F> {
    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<Vec<usize>> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return shape_err(op, sa, sb);
        }
        Ok(sa.to_vec())
    }

    fn zip_with(&mut self, name: &'static str, a: Var, b: Var, op: Op<F>, f: impl Fn(F, F) -> F) -> Result<Var> {
        let shape = self.same_shape(name, a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        self.push(name, Tensor::new(&shape, data)?, op)
    }

    fn unary(&mut self, name: &'static str, x: Var, op: Op<F>, f: impl Fn(F) -> F) -> Result<Var> {
        let value = self.value(x).map(f);
        self.push(name, value, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("div", a, b, Op::Div(a, b), |x, y| x / y)
    }

    fn check_suffix(&self, op: &'static str, x: Var, b: Var) -> Result<usize> {
        let (sx, sb) = (self.shape(x), self.shape(b));
        if sb.len() > sx.len() || sx[sx.len() - sb.len()..] != *sb {
            return shape_err(op, sx, sb);
        }
        Ok(sb.iter().product())
    }

    /// `x + b` where `b`'s shape is a suffix of `x`'s (bias add).
    pub fn add_bcast(&mut self, x: Var, b: Var) -> Result<Var> {
        let inner = self.check_suffix("add_bcast", x, b)?;
        let bv = self.value(b).data();
        let mut out = self.value(x).clone();
        for chunk in out.data_mut().chunks_mut(inner) {
            for (o, &bb) in chunk.iter_mut().zip(bv) {
                *o += bb;
            }
        }
        self.push("add_bcast", out, Op::AddBcast(x, b))
    }

    /// `x * b` where `b`'s shape is a suffix of `x`'s (gain).
    pub fn mul_bcast(&mut self, x: Var, b: Var) -> Result<Var> {
        let inner = self.check_suffix("mul_bcast", x, b)?;
        let bv = self.value(b).data();
        let mut out = self.value(x).clone();
        for chunk in out.data_mut().chunks_mut(inner) {
            for (o, &bb) in chunk.iter_mut().zip(bv) {
                *o *= bb;
            }
        }
        self.push("mul_bcast", out, Op::MulBcast(x, b))
    }

    pub fn scale(&mut self, x: Var, c: F) -> Result<Var> {
        self.unary("scale", x, Op::Scale(x, c), |v| v * c)
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.scale(x, -F::one())
    }

    pub fn add_scalar(&mut self, x: Var, c: F) -> Result<Var> {
        self.unary("add_scalar", x, Op::AddScalar(x), |v| v + c)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary("exp", x, Op::Exp(x), F::exp)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary("log", x, Op::Log(x), F::ln)
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        self.unary("sqrt", x, Op::Sqrt(x), F::sqrt)
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.unary("square", x, Op::Square(x), |v| v * v)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary("tanh", x, Op::Tanh(x), F::tanh)
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        self.unary("gelu", x, Op::Gelu(x), kernels::gelu)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().copied().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let s = v.data().iter().copied().sum::<F>() / F::from_usize(v.numel()).unwrap();
        self.push("mean", Tensor::scalar(s), Op::Mean(x))
    }

    fn reduce_last(&mut self, name: &'static str, x: Var, mean: bool) -> Result<Var> {
        let v = self.value(x);
        let d = v.last_dim();
        let norm = if mean {
            F::from_usize(d).unwrap().recip()
        } else {
            F::one()
        };
        let data: Vec<F> = v.data().chunks(d).map(|r| r.iter().copied().sum::<F>() * norm).collect();
        let mut shape = v.shape()[..v.rank() - 1].to_vec();
        if shape.is_empty() {
            shape.push(1);
        }
        let op = if mean { Op::MeanLast(x) } else { Op::SumLast(x) };
        self.push(name, Tensor::new(&shape, data)?, op)
    }

    /// Sum over the last axis, dropping it.
    pub fn sum_last(&mut self, x: Var) -> Result<Var> {
        self.reduce_last("sum_last", x, false)
    }

    pub fn mean_last(&mut self, x: Var) -> Result<Var> {
        self.reduce_last("mean_last", x, true)
    }

    /// Repeat each element `d` times along a new trailing axis.
    pub fn expand_last(&mut self, x: Var, d: usize) -> Result<Var> {
        if d == 0 {
            return invalid("expand_last", "zero extent");
        }
        let v = self.value(x);
        let data = v.data().iter().flat_map(|&e| std::iter::repeat_n(e, d)).collect();
        let mut shape = v.shape().to_vec();
        shape.push(d);
        self.push("expand_last", Tensor::new(&shape, data)?, Op::ExpandLast(x))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).clone().reshaped(shape)?;
        self.push("reshape", v, Op::Reshape(x))
    }

    /// Transpose of a rank-2 tensor.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        if v.rank() != 2 {
            return invalid("transpose", format!("expected rank 2, got {:?}", v.shape()));
        }
        let (r, c) = (v.shape()[0], v.shape()[1]);
        let src = v.data();
        let mut data = vec![F::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = src[i * c + j];
            }
        }
        self.push("transpose", Tensor::new(&[c, r], data)?, Op::Transpose(x))
    }

    /// Elements `[start, end)` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let v = self.value(x);
        let shape = v.shape();
        if axis >= shape.len() || start >= end || end > shape[axis] {
            return invalid("slice", format!("axis {axis} range {start}..{end} on {shape:?}"));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let n = shape[axis];
        let width = end - start;
        let mut data = Vec::with_capacity(outer * width * inner);
        for o in 0..outer {
            let base = o * n * inner;
            data.extend_from_slice(&v.data()[base + start * inner..base + end * inner]);
        }
        let mut out_shape = shape.to_vec();
        out_shape[axis] = width;
        self.push("slice", Tensor::new(&out_shape, data)?, Op::Slice { x, axis, start })
    }

    /// Concatenate along `axis`; all other extents must agree.
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let Some(&first) = xs.first() else {
            return invalid("concat", "no inputs");
        };
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return invalid("concat", format!("axis {axis} on {base:?}"));
        }
        let mut total = 0;
        for &x in xs {
            let s = self.shape(x);
            if s.len() != base.len() || s.iter().enumerate().any(|(i, &e)| i != axis && e != base[i]) {
                return shape_err("concat", &base, s);
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &x in xs {
                let n = self.shape(x)[axis];
                data.extend_from_slice(&self.value(x).data()[o * n * inner..(o + 1) * n * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        self.push(
            "concat",
            Tensor::new(&shape, data)?,
            Op::Concat {
                xs: xs.to_vec(),
                axis,
            },
        )
    }

    /// `a @ b` where `a` is `[.., k]` (leading axes flattened into rows) and
    /// `b` is `[k, n]`. The result is `[.., n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() < 2 || sb.len() != 2 || sa[sa.len() - 1] != sb[0] {
            return shape_err("matmul", &sa, &sb);
        }
        let (k, n) = (sb[0], sb[1]);
        let m = self.value(a).numel() / k;
        let data = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        let mut shape = sa;
        *shape.last_mut().unwrap() = n;
        self.push("matmul", Tensor::new(&shape, data)?, Op::Matmul(a, b))
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let out = kernels::softmax_rows(v.data(), v.last_dim());
        let out = Tensor::new(v.shape(), out)?;
        self.push("softmax", out, Op::Softmax(x))
    }

    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let d = v.last_dim();
        let mut out = v.data().to_vec();
        for row in out.chunks_mut(d) {
            let max = row.iter().copied().fold(F::neg_infinity(), F::max);
            let lse = row.iter().map(|&e| (e - max).exp()).sum::<F>().ln() + max;
            for e in row.iter_mut() {
                *e -= lse;
            }
        }
        let out = Tensor::new(v.shape(), out)?;
        self.push("log_softmax", out, Op::LogSoftmax(x))
    }

    /// Layer normalisation over the last axis, without affine parameters.
    pub fn layer_norm(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let (out, inv_std) = kernels::layer_norm(v.data(), v.last_dim());
        let out = Tensor::new(v.shape(), out)?;
        self.push("layer_norm", out, Op::LayerNorm { x, inv_std })
    }

    /// Mean squared error, averaged over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.same_shape("mse", a, b)?;
        let n = F::from_usize(shape.iter().product()).unwrap();
        let s: F = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum();
        self.push("mse", Tensor::scalar(s / n), Op::Mse(a, b))
    }

    /// Smooth-L1 (Huber with transition `beta`), averaged over all elements.
    pub fn smooth_l1(&mut self, a: Var, b: Var, beta: F) -> Result<Var> {
        let shape = self.same_shape("smooth_l1", a, b)?;
        if beta <= F::zero() {
            return invalid("smooth_l1", "beta must be positive");
        }
        let n = F::from_usize(shape.iter().product()).unwrap();
        let half = F::from_f64_lossy(0.5);
        let s: F = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| {
                let d = (x - y).abs();
                if d < beta {
                    half * d * d / beta
                } else {
                    d - half * beta
                }
            })
            .sum();
        self.push("smooth_l1", Tensor::scalar(s / n), Op::SmoothL1 { a, b, beta })
    }

    /// Rows of `table` (`[vocab, d]`) selected by `ids`; result `[ids.len(), d]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        if t.rank() != 2 || ids.is_empty() {
            return invalid("embedding", format!("table {:?}, {} ids", t.shape(), ids.len()));
        }
        let (vocab, d) = (t.shape()[0], t.shape()[1]);
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            if i >= vocab {
                return invalid("embedding", format!("id {i} out of range for vocab {vocab}"));
            }
            data.extend_from_slice(t.row(i));
        }
        self.push(
            "embedding",
            Tensor::new(&[ids.len(), d], data)?,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
        )
    }

    /// Multi-head attention over `batch` sequences. `q` is `[batch * lq, d]`
    /// (or `[batch, lq, d]`), `k` and `v` are `[batch * lk, d]`. The output
    /// has the shape of `q`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, batch: usize, heads: usize) -> Result<Var> {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let d = qv.last_dim();
        if kv.shape() != vv.shape() || kv.last_dim() != d {
            return shape_err("attention", kv.shape(), vv.shape());
        }
        if heads == 0 || d % heads != 0 || batch == 0 || qv.rows() % batch != 0 || kv.rows() % batch != 0 {
            return shape_err("attention", qv.shape(), kv.shape());
        }
        let (lq, lk) = (qv.rows() / batch, kv.rows() / batch);
        let (out, probs) = kernels::attention_forward(qv.data(), kv.data(), vv.data(), batch, heads, lq, lk, d);
        let out = Tensor::new(qv.shape(), out)?;
        self.push(
            "attention",
            out,
            Op::Attention {
                q,
                k,
                v,
                batch,
                heads,
                probs,
            },
        )
    }

    /// Sliding windows over the time axis of `[batch, len, ch]` with zero
    /// padding. Output is `[batch, out_len, kernel * ch]`, which turns a 1-D
    /// convolution into a matmul.
    pub fn unfold1d(&mut self, x: Var, kernel: usize, stride: usize, pad: usize) -> Result<Var> {
        let v = self.value(x);
        if v.rank() != 3 || kernel == 0 || stride == 0 || v.shape()[1] + 2 * pad < kernel {
            return invalid("unfold1d", format!("input {:?} kernel {kernel} stride {stride}", v.shape()));
        }
        let (b, len, ch) = (v.shape()[0], v.shape()[1], v.shape()[2]);
        let out_len = (len + 2 * pad - kernel) / stride + 1;
        let mut data = vec![F::zero(); b * out_len * kernel * ch];
        for bi in 0..b {
            for o in 0..out_len {
                for kk in 0..kernel {
                    let src = (o * stride + kk) as isize - pad as isize;
                    if src < 0 || src as usize >= len {
                        continue;
                    }
                    let s = (bi * len + src as usize) * ch;
                    let dst = ((bi * out_len + o) * kernel + kk) * ch;
                    data[dst..dst + ch].copy_from_slice(&v.data()[s..s + ch]);
                }
            }
        }
        self.push(
            "unfold1d",
            Tensor::new(&[b, out_len, kernel * ch], data)?,
            Op::Unfold1d {
                x,
                kernel,
                stride,
                pad,
            },
        )
    }

    /// Nearest-neighbour upsampling of `[batch, len, ch]` along time.
    pub fn upsample1d(&mut self, x: Var, factor: usize) -> Result<Var> {
        let v = self.value(x);
        if v.rank() != 3 || factor == 0 {
            return invalid("upsample1d", format!("input {:?} factor {factor}", v.shape()));
        }
        let (b, len, ch) = (v.shape()[0], v.shape()[1], v.shape()[2]);
        let mut data = Vec::with_capacity(v.numel() * factor);
        for frame in v.data().chunks(ch) {
            for _ in 0..factor {
                data.extend_from_slice(frame);
            }
        }
        self.push(
            "upsample1d",
            Tensor::new(&[b, len * factor, ch], data)?,
            Op::Upsample1d { x, factor },
        )
    }
}

/// Sinusoidal embedding of integer timesteps, one row of width `dim` per
/// entry: `[sin(t w_0), .., sin(t w_{h-1}), cos(t w_0), .., cos(t w_{h-1})]`
/// with `w_i = 10000^(-i / h)` and `h = dim / 2`.
pub fn timestep_embedding<F: Scalar>(timesteps: &[usize], dim: usize) -> Result<Tensor<F>> {
    if dim < 2 || !dim.is_multiple_of(2) || timesteps.is_empty() {
        return invalid("timestep_embedding", format!("dim {dim} must be even and >= 2"));
    }
    let half = dim / 2;
    let mut data = Vec::with_capacity(timesteps.len() * dim);
    for &t in timesteps {
        let t = t as f64;
        let freqs = (0..half).map(|i| (-(10_000f64.ln()) * i as f64 / half as f64).exp());
        let (sin, cos): (Vec<f64>, Vec<f64>) = freqs.map(|w| ((t * w).sin(), (t * w).cos())).unzip();
        data.extend(sin.into_iter().chain(cos).map(F::from_f64_lossy));
    }
    Tensor::new(&[timesteps.len(), dim], data)
}
