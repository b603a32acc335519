//! Parameterised layers shared by the text encoder, VAE, denoiser and
//! evaluator. Each layer is a pair of functions: `init_*` registers its
//! parameters under a dot-separated prefix, the forward function binds them
//! on a [`Graph`].

use rand::Rng;

use crate::tensor::{Graph, ParameterStore, Result, Scalar, Var};

fn key(prefix: &str, leaf: &str) -> String {
    format!("{prefix}.{leaf}")
}

pub fn init_linear<F: Scalar>(
    store: &mut ParameterStore<F>,
    prefix: &str,
    d_in: usize,
    d_out: usize,
    rng: &mut impl Rng,
) -> Result<()> {
    store.init_linear_weight(&key(prefix, "w"), d_in, d_out, rng)?;
    store.init_const(&key(prefix, "b"), &[d_out], 0.0)
}

/// `x @ w + b` over the last axis of `x`.
pub fn linear<F: Scalar>(g: &mut Graph<F>, store: &ParameterStore<F>, prefix: &str, x: Var) -> Result<Var> {
    let w = g.param(store, &key(prefix, "w"))?;
    let b = g.param(store, &key(prefix, "b"))?;
    let y = g.matmul(x, w)?;
    g.add_bcast(y, b)
}

pub fn init_layer_norm<F: Scalar>(store: &mut ParameterStore<F>, prefix: &str, d: usize) -> Result<()> {
    store.init_const(&key(prefix, "gamma"), &[d], 1.0)?;
    store.init_const(&key(prefix, "beta"), &[d], 0.0)
}

pub fn layer_norm<F: Scalar>(g: &mut Graph<F>, store: &ParameterStore<F>, prefix: &str, x: Var) -> Result<Var> {
    let gamma = g.param(store, &key(prefix, "gamma"))?;
    let beta = g.param(store, &key(prefix, "beta"))?;
    let n = g.layer_norm(x)?;
    let n = g.mul_bcast(n, gamma)?;
    g.add_bcast(n, beta)
}

/// Multi-head attention projections. Queries come from width `d_model`,
/// keys and values from width `d_ctx`.
pub fn init_attention<F: Scalar>(
    store: &mut ParameterStore<F>,
    prefix: &str,
    d_model: usize,
    d_ctx: usize,
    rng: &mut impl Rng,
) -> Result<()> {
    init_linear(store, &key(prefix, "q"), d_model, d_model, rng)?;
    init_linear(store, &key(prefix, "k"), d_ctx, d_model, rng)?;
    init_linear(store, &key(prefix, "v"), d_ctx, d_model, rng)?;
    init_linear(store, &key(prefix, "o"), d_model, d_model, rng)
}

/// Query projection only, for callers that attend one query set against
/// several contexts.
pub fn attention_query<F: Scalar>(g: &mut Graph<F>, store: &ParameterStore<F>, prefix: &str, x: Var) -> Result<Var> {
    linear(g, store, &key(prefix, "q"), x)
}

/// Attention of already projected queries `q` (`[batch * lq, d_model]`)
/// over `ctx` (`[batch * lk, d_ctx]`), including the output projection.
pub fn attend<F: Scalar>(
    g: &mut Graph<F>,
    store: &ParameterStore<F>,
    prefix: &str,
    q: Var,
    ctx: Var,
    batch: usize,
    heads: usize,
) -> Result<Var> {
    let k = linear(g, store, &key(prefix, "k"), ctx)?;
    let v = linear(g, store, &key(prefix, "v"), ctx)?;
    let a = g.attention(q, k, v, batch, heads)?;
    linear(g, store, &key(prefix, "o"), a)
}

#[allow(clippy::too_many_arguments)]
pub fn attention<F: Scalar>(
    g: &mut Graph<F>,
    store: &ParameterStore<F>,
    prefix: &str,
    x: Var,
    ctx: Var,
    batch: usize,
    heads: usize,
) -> Result<Var> {
    let q = attention_query(g, store, prefix, x)?;
    attend(g, store, prefix, q, ctx, batch, heads)
}

pub fn init_feed_forward<F: Scalar>(
    store: &mut ParameterStore<F>,
    prefix: &str,
    d: usize,
    hidden: usize,
    rng: &mut impl Rng,
) -> Result<()> {
    init_linear(store, &key(prefix, "fc1"), d, hidden, rng)?;
    init_linear(store, &key(prefix, "fc2"), hidden, d, rng)
}

pub fn feed_forward<F: Scalar>(g: &mut Graph<F>, store: &ParameterStore<F>, prefix: &str, x: Var) -> Result<Var> {
    let h = linear(g, store, &key(prefix, "fc1"), x)?;
    let h = g.gelu(h)?;
    linear(g, store, &key(prefix, "fc2"), h)
}

/// Pre-norm self-attention plus feed-forward block over `batch` sequences
/// stored as `[batch * len, d]`.
pub fn init_encoder_block<F: Scalar>(
    store: &mut ParameterStore<F>,
    prefix: &str,
    d: usize,
    rng: &mut impl Rng,
) -> Result<()> {
    init_layer_norm(store, &key(prefix, "ln1"), d)?;
    init_attention(store, &key(prefix, "attn"), d, d, rng)?;
    init_layer_norm(store, &key(prefix, "ln2"), d)?;
    init_feed_forward(store, &key(prefix, "ff"), d, 2 * d, rng)
}

pub fn encoder_block<F: Scalar>(
    g: &mut Graph<F>,
    store: &ParameterStore<F>,
    prefix: &str,
    x: Var,
    batch: usize,
    heads: usize,
) -> Result<Var> {
    let h = layer_norm(g, store, &key(prefix, "ln1"), x)?;
    let a = attention(g, store, &key(prefix, "attn"), h, h, batch, heads)?;
    let x = g.add(x, a)?;
    let h = layer_norm(g, store, &key(prefix, "ln2"), x)?;
    let f = feed_forward(g, store, &key(prefix, "ff"), h)?;
    g.add(x, f)
}

/// 1-D convolution over `[batch, len, c_in]` as unfold + matmul.
pub struct Conv1d {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv1d {
    pub const SAME3: Conv1d = Conv1d {
        kernel: 3,
        stride: 1,
        pad: 1,
    };
    pub const DOWN2: Conv1d = Conv1d {
        kernel: 4,
        stride: 2,
        pad: 1,
    };

    pub fn init<F: Scalar>(
        &self,
        store: &mut ParameterStore<F>,
        prefix: &str,
        c_in: usize,
        c_out: usize,
        rng: &mut impl Rng,
    ) -> Result<()> {
        init_linear(store, prefix, self.kernel * c_in, c_out, rng)
    }

    pub fn forward<F: Scalar>(&self, g: &mut Graph<F>, store: &ParameterStore<F>, prefix: &str, x: Var) -> Result<Var> {
        let cols = g.unfold1d(x, self.kernel, self.stride, self.pad)?;
        linear(g, store, prefix, cols)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::grad_check_params;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn encoder_block_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s = ParameterStore::<f64>::new();
        init_encoder_block(&mut s, "blk", 8, &mut rng).unwrap();
        let x = Tensor::from_f64(&[6, 8], &(0..48).map(|i| (i as f64 * 0.37).sin()).collect::<Vec<_>>()).unwrap();
        let r = grad_check_params(
            |g, s| {
                let xv = g.constant(x.clone())?;
                let y = encoder_block(g, s, "blk", xv, 2, 2)?;
                let y = g.square(y)?;
                g.mean(y)
            },
            &s,
            1e-5,
            12,
        )
        .unwrap();
        assert!(r.max_rel_err <= 1e-5, "{r:?}");
    }

    #[test]
    fn conv_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s = ParameterStore::<f32>::new();
        Conv1d::DOWN2.init(&mut s, "c", 3, 5, &mut rng).unwrap();
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[2, 16, 3])).unwrap();
        let y = Conv1d::DOWN2.forward(&mut g, &s, "c", x).unwrap();
        assert_eq!(g.shape(y), &[2, 8, 5]);
    }
}
