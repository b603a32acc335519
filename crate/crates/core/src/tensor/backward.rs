//! Vector-Jacobian products for every operator in the catalogue.

use super::graph::{Graph, Op, Var};
use super::kernels;
use super::{Result, Scalar, Tensor};

impl<F: Scalar> Graph<F> {
    fn like(&self, v: Var, data: Vec<F>) -> Result<Tensor<F>> {
        Tensor::new(self.shape(v), data)
    }

    fn elementwise(&self, x: Var, up: &Tensor<F>, df: impl Fn(F) -> F) -> Result<Tensor<F>> {
        let data = self
            .value(x)
            .data()
            .iter()
            .zip(up.data())
            .map(|(&i, &u)| u * df(i))
            .collect();
        self.like(x, data)
    }

    /// Input gradients of node `id` given its upstream gradient.
    pub(crate) fn backward_op(&self, id: usize, up: &Tensor<F>) -> Result<Vec<(Var, Tensor<F>)>> {
        let node = &self.nodes[id];
        let out = &node.value;
        let g = up.data();
        Ok(match &node.op {
            Op::Leaf => vec![],
            Op::Add(a, b) => vec![(*a, up.clone()), (*b, up.clone())],
            Op::Sub(a, b) => vec![(*a, up.clone()), (*b, up.map(|x| -x))],
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let ga = g.iter().zip(bv).map(|(&u, &y)| u * y).collect();
                let gb = g.iter().zip(av).map(|(&u, &x)| u * x).collect();
                vec![(*a, self.like(*a, ga)?), (*b, self.like(*b, gb)?)]
            }
            Op::Div(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let ga = g.iter().zip(bv).map(|(&u, &y)| u / y).collect();
                let gb = g
                    .iter()
                    .zip(av.iter().zip(bv))
                    .map(|(&u, (&x, &y))| -u * x / (y * y))
                    .collect();
                vec![(*a, self.like(*a, ga)?), (*b, self.like(*b, gb)?)]
            }
            Op::AddBcast(x, b) => {
                let inner = self.value(*b).numel();
                let mut gb = vec![F::zero(); inner];
                for chunk in g.chunks(inner) {
                    for (acc, &u) in gb.iter_mut().zip(chunk) {
                        *acc += u;
                    }
                }
                vec![(*x, up.clone()), (*b, self.like(*b, gb)?)]
            }
            Op::MulBcast(x, b) => {
                let bv = self.value(*b).data();
                let xv = self.value(*x).data();
                let inner = bv.len();
                let mut gb = vec![F::zero(); inner];
                let mut gx = Vec::with_capacity(g.len());
                for (gc, xc) in g.chunks(inner).zip(xv.chunks(inner)) {
                    for i in 0..inner {
                        gb[i] += gc[i] * xc[i];
                        gx.push(gc[i] * bv[i]);
                    }
                }
                vec![(*x, self.like(*x, gx)?), (*b, self.like(*b, gb)?)]
            }
            Op::Scale(x, c) => vec![(*x, up.map(|u| u * *c))],
            Op::AddScalar(x) => vec![(*x, up.clone())],
            Op::Exp(x) => {
                let d = g.iter().zip(out.data()).map(|(&u, &o)| u * o).collect();
                vec![(*x, self.like(*x, d)?)]
            }
            Op::Log(x) => vec![(*x, self.elementwise(*x, up, F::recip)?)],
            Op::Sqrt(x) => {
                let two = F::from_f64_lossy(2.0);
                let d = g.iter().zip(out.data()).map(|(&u, &o)| u / (two * o)).collect();
                vec![(*x, self.like(*x, d)?)]
            }
            Op::Square(x) => {
                let two = F::from_f64_lossy(2.0);
                vec![(*x, self.elementwise(*x, up, |i| two * i)?)]
            }
            Op::Tanh(x) => {
                let d = g.iter().zip(out.data()).map(|(&u, &o)| u * (F::one() - o * o)).collect();
                vec![(*x, self.like(*x, d)?)]
            }
            Op::Gelu(x) => vec![(*x, self.elementwise(*x, up, kernels::gelu_grad)?)],
            Op::Sum(x) => vec![(*x, Tensor::full(self.shape(*x), g[0]))],
            Op::Mean(x) => {
                let n = F::from_usize(self.value(*x).numel()).unwrap();
                vec![(*x, Tensor::full(self.shape(*x), g[0] / n))]
            }
            Op::SumLast(x) | Op::MeanLast(x) => {
                let d = self.value(*x).last_dim();
                let scale = if matches!(node.op, Op::MeanLast(_)) {
                    F::from_usize(d).unwrap().recip()
                } else {
                    F::one()
                };
                let data = g.iter().flat_map(|&u| std::iter::repeat_n(u * scale, d)).collect();
                vec![(*x, self.like(*x, data)?)]
            }
            Op::ExpandLast(x) => {
                let d = out.last_dim();
                let data = g.chunks(d).map(|c| c.iter().copied().sum()).collect();
                vec![(*x, self.like(*x, data)?)]
            }
            Op::Reshape(x) => vec![(*x, self.like(*x, g.to_vec())?)],
            Op::Transpose(x) => {
                let (r, c) = (self.shape(*x)[0], self.shape(*x)[1]);
                let mut data = vec![F::zero(); r * c];
                for i in 0..r {
                    for j in 0..c {
                        data[i * c + j] = g[j * r + i];
                    }
                }
                vec![(*x, self.like(*x, data)?)]
            }
            Op::Slice { x, axis, start } => {
                let shape = self.shape(*x);
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let n = shape[*axis];
                let width = out.shape()[*axis];
                let mut data = vec![F::zero(); self.value(*x).numel()];
                for o in 0..outer {
                    let dst = o * n * inner + start * inner;
                    data[dst..dst + width * inner].copy_from_slice(&g[o * width * inner..(o + 1) * width * inner]);
                }
                vec![(*x, self.like(*x, data)?)]
            }
            Op::Concat { xs, axis } => {
                let shape = out.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let total = shape[*axis];
                let mut offset = 0;
                let mut res = Vec::with_capacity(xs.len());
                for &x in xs {
                    let n = self.shape(x)[*axis];
                    let mut data = Vec::with_capacity(outer * n * inner);
                    for o in 0..outer {
                        let src = (o * total + offset) * inner;
                        data.extend_from_slice(&g[src..src + n * inner]);
                    }
                    offset += n;
                    res.push((x, self.like(x, data)?));
                }
                res
            }
            Op::Matmul(a, b) => {
                let (k, n) = (self.shape(*b)[0], self.shape(*b)[1]);
                let m = self.value(*a).numel() / k;
                let ga = kernels::matmul_nt(g, self.value(*b).data(), m, n, k);
                let gb = kernels::matmul_tn(self.value(*a).data(), g, k, m, n);
                vec![(*a, self.like(*a, ga)?), (*b, self.like(*b, gb)?)]
            }
            Op::Softmax(x) => {
                let d = out.last_dim();
                let mut data = Vec::with_capacity(g.len());
                for (gr, yr) in g.chunks(d).zip(out.data().chunks(d)) {
                    let inner = kernels::dot(gr, yr);
                    data.extend(gr.iter().zip(yr).map(|(&u, &y)| y * (u - inner)));
                }
                vec![(*x, self.like(*x, data)?)]
            }
            Op::LogSoftmax(x) => {
                let d = out.last_dim();
                let mut data = Vec::with_capacity(g.len());
                for (gr, yr) in g.chunks(d).zip(out.data().chunks(d)) {
                    let s: F = gr.iter().copied().sum();
                    data.extend(gr.iter().zip(yr).map(|(&u, &y)| u - y.exp() * s));
                }
                vec![(*x, self.like(*x, data)?)]
            }
            Op::LayerNorm { x, inv_std } => {
                let d = out.last_dim();
                let inv_d = F::from_usize(d).unwrap().recip();
                let mut data = Vec::with_capacity(g.len());
                for ((gr, yr), &is) in g.chunks(d).zip(out.data().chunks(d)).zip(inv_std) {
                    let mg = gr.iter().copied().sum::<F>() * inv_d;
                    let mgy = kernels::dot(gr, yr) * inv_d;
                    data.extend(gr.iter().zip(yr).map(|(&u, &y)| is * (u - mg - y * mgy)));
                }
                vec![(*x, self.like(*x, data)?)]
            }
            Op::Mse(a, b) => {
                let n = F::from_usize(self.value(*a).numel()).unwrap();
                let c = F::from_f64_lossy(2.0) * g[0] / n;
                let diff: Vec<F> = self
                    .value(*a)
                    .data()
                    .iter()
                    .zip(self.value(*b).data())
                    .map(|(&x, &y)| c * (x - y))
                    .collect();
                let neg = diff.iter().map(|&v| -v).collect();
                vec![(*a, self.like(*a, diff)?), (*b, self.like(*b, neg)?)]
            }
            Op::SmoothL1 { a, b, beta } => {
                let n = F::from_usize(self.value(*a).numel()).unwrap();
                let c = g[0] / n;
                let diff: Vec<F> = self
                    .value(*a)
                    .data()
                    .iter()
                    .zip(self.value(*b).data())
                    .map(|(&x, &y)| {
                        let d = x - y;
                        if d.abs() < *beta {
                            c * d / *beta
                        } else {
                            c * d.signum()
                        }
                    })
                    .collect();
                let neg = diff.iter().map(|&v| -v).collect();
                vec![(*a, self.like(*a, diff)?), (*b, self.like(*b, neg)?)]
            }
            Op::Embedding { table, ids } => {
                let d = self.value(*table).last_dim();
                let mut data = vec![F::zero(); self.value(*table).numel()];
                for (row, &i) in g.chunks(d).zip(ids) {
                    for (acc, &u) in data[i * d..(i + 1) * d].iter_mut().zip(row) {
                        *acc += u;
                    }
                }
                vec![(*table, self.like(*table, data)?)]
            }
            Op::Attention {
                q,
                k,
                v,
                batch,
                heads,
                probs,
            } => {
                let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                let d = qv.last_dim();
                let (lq, lk) = (qv.rows() / batch, kv.rows() / batch);
                let (dq, dk, dv) =
                    kernels::attention_backward(qv.data(), kv.data(), vv.data(), probs, g, *batch, *heads, lq, lk, d);
                vec![(*q, self.like(*q, dq)?), (*k, self.like(*k, dk)?), (*v, self.like(*v, dv)?)]
            }
            Op::Unfold1d {
                x,
                kernel,
                stride,
                pad,
            } => {
                let s = self.shape(*x);
                let (b, len, ch) = (s[0], s[1], s[2]);
                let out_len = out.shape()[1];
                let mut data = vec![F::zero(); b * len * ch];
                for bi in 0..b {
                    for o in 0..out_len {
                        for kk in 0..*kernel {
                            let src = (o * stride + kk) as isize - *pad as isize;
                            if src < 0 || src as usize >= len {
                                continue;
                            }
                            let dst = (bi * len + src as usize) * ch;
                            let from = ((bi * out_len + o) * kernel + kk) * ch;
                            for c in 0..ch {
                                data[dst + c] += g[from + c];
                            }
                        }
                    }
                }
                vec![(*x, self.like(*x, data)?)]
            }
            Op::Upsample1d { x, factor } => {
                let ch = out.last_dim();
                let mut data = vec![F::zero(); self.value(*x).numel()];
                for (i, frame) in g.chunks(ch).enumerate() {
                    let dst = (i / factor) * ch;
                    for c in 0..ch {
                        data[dst + c] += frame[c];
                    }
                }
                vec![(*x, self.like(*x, data)?)]
            }
        })
    }
}

