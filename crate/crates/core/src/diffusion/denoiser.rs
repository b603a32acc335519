//! Transformer noise predictor over `[B, 16, 16]` latents with
//! cross-attention to text embeddings, plus the two composition modes.

use rand::Rng;

use super::config::{Aggregation, DenoiserConfig, Mode};
use super::{DiffusionError, Result};
use crate::nn;
use crate::tensor::{timestep_embedding, Graph, ParameterStore, Scalar, Var};
use crate::text::{TEXT_DIM, TEXT_LEN};
use crate::vae::{LATENT_DIM, LATENT_LEN};

const P: &str = "den";

fn key(leaf: impl std::fmt::Display) -> String {
    format!("{P}.{leaf}")
}

fn block(i: usize, leaf: &str) -> String {
    format!("{P}.block{i}.{leaf}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Denoiser {
    pub cfg: DenoiserConfig,
}

impl Denoiser {
    pub fn new(cfg: DenoiserConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg })
    }

    pub fn init<F: Scalar>(&self, store: &mut ParameterStore<F>, rng: &mut impl Rng) -> Result<()> {
        let w = self.cfg.width;
        nn::init_linear(store, &key("in"), LATENT_DIM, w, rng)?;
        store.init_normal(&key("pos"), &[LATENT_LEN, w], 0.02, rng)?;
        nn::init_linear(store, &key("time.fc1"), self.cfg.time_dim, w, rng)?;
        nn::init_linear(store, &key("time.fc2"), w, w, rng)?;
        for i in 0..self.cfg.blocks {
            nn::init_layer_norm(store, &block(i, "ln1"), w)?;
            nn::init_attention(store, &block(i, "self"), w, w, rng)?;
            nn::init_layer_norm(store, &block(i, "ln2"), w)?;
            nn::init_attention(store, &block(i, "cross"), w, TEXT_DIM, rng)?;
            nn::init_layer_norm(store, &block(i, "ln3"), w)?;
            nn::init_feed_forward(store, &block(i, "ff"), w, self.cfg.ff_mult * w, rng)?;
        }
        nn::init_layer_norm(store, &key("ln_out"), w)?;
        nn::init_linear(store, &key("out"), w, LATENT_DIM, rng)?;
        Ok(())
    }

    fn check(&self, g: &Graph<impl Scalar>, z: Var, t: &[usize], ctx: &[Var]) -> Result<usize> {
        let s = g.shape(z);
        if s.len() != 3 || s[1] != LATENT_LEN || s[2] != LATENT_DIM || s[0] != t.len() {
            return Err(DiffusionError::Shape(format!(
                "denoiser: latent {s:?} with {} timesteps, expected [B, {LATENT_LEN}, {LATENT_DIM}]",
                t.len()
            )));
        }
        let b = s[0];
        if ctx.is_empty() {
            return Err(DiffusionError::Shape("denoiser: empty condition set".into()));
        }
        for &c in ctx {
            if g.shape(c) != [b * TEXT_LEN, TEXT_DIM] {
                return Err(DiffusionError::Shape(format!(
                    "denoiser: condition {:?}, expected [{}, {TEXT_DIM}]",
                    g.shape(c),
                    b * TEXT_LEN
                )));
            }
        }
        Ok(b)
    }

    /// Cross-attention of `x` (`[B * 16, W]`) over each context, aggregated.
    /// The branches share every projection; `K = 1` is plain cross-attention.
    #[allow(clippy::too_many_arguments)]
    pub fn dca<F: Scalar>(
        &self,
        g: &mut Graph<F>,
        store: &ParameterStore<F>,
        prefix: &str,
        x: Var,
        ctx: &[Var],
        batch: usize,
        agg: Aggregation,
    ) -> Result<Var> {
        if ctx.is_empty() {
            return Err(DiffusionError::Shape("dca: empty condition set".into()));
        }
        let q = nn::attention_query(g, store, prefix, x)?;
        let mut out = nn::attend(g, store, prefix, q, ctx[0], batch, self.cfg.heads)?;
        if ctx.len() == 1 {
            return Ok(out);
        }
        for &c in &ctx[1..] {
            let branch = nn::attend(g, store, prefix, q, c, batch, self.cfg.heads)?;
            out = g.add(out, branch)?;
        }
        Ok(match agg {
            Aggregation::Sum => out,
            Aggregation::Mean => g.scale(out, F::from_f64_lossy(1.0 / ctx.len() as f64))?,
        })
    }

    /// One forward pass. `z` is `[B, 16, 16]`, `t` has one timestep per
    /// sample, each context is `[B * TEXT_LEN, TEXT_DIM]`. Several contexts
    /// replace every cross-attention with [`Denoiser::dca`].
    pub fn forward<F: Scalar>(
        &self,
        g: &mut Graph<F>,
        store: &ParameterStore<F>,
        z: Var,
        t: &[usize],
        ctx: &[Var],
        agg: Aggregation,
    ) -> Result<Var> {
        let b = self.check(g, z, t, ctx)?;
        let rows = b * LATENT_LEN;
        let x = g.reshape(z, &[rows, LATENT_DIM])?;
        let mut h = nn::linear(g, store, &key("in"), x)?;

        let pos = g.param(store, &key("pos"))?;
        let pos_ids: Vec<usize> = (0..rows).map(|r| r % LATENT_LEN).collect();
        let pos = g.embedding(pos, &pos_ids)?;
        h = g.add(h, pos)?;

        let temb = g.constant(timestep_embedding(t, self.cfg.time_dim)?)?;
        let temb = nn::linear(g, store, &key("time.fc1"), temb)?;
        let temb = g.gelu(temb)?;
        let temb = nn::linear(g, store, &key("time.fc2"), temb)?;
        let row_ids: Vec<usize> = (0..rows).map(|r| r / LATENT_LEN).collect();
        let temb = g.embedding(temb, &row_ids)?;
        h = g.add(h, temb)?;

        for i in 0..self.cfg.blocks {
            let n = nn::layer_norm(g, store, &block(i, "ln1"), h)?;
            let a = nn::attention(g, store, &block(i, "self"), n, n, b, self.cfg.heads)?;
            h = g.add(h, a)?;
            let n = nn::layer_norm(g, store, &block(i, "ln2"), h)?;
            let c = self.dca(g, store, &block(i, "cross"), n, ctx, b, agg)?;
            h = g.add(h, c)?;
            let n = nn::layer_norm(g, store, &block(i, "ln3"), h)?;
            let f = nn::feed_forward(g, store, &block(i, "ff"), n)?;
            h = g.add(h, f)?;
        }
        let h = nn::layer_norm(g, store, &key("ln_out"), h)?;
        let out = nn::linear(g, store, &key("out"), h)?;
        Ok(g.reshape(out, &[b, LATENT_LEN, LATENT_DIM])?)
    }

    /// Composed noise prediction for the concept set `ctx`.
    ///
    /// Latent mode runs the K single-concept predictions as one batched pass
    /// over `K * B` rows and aggregates them; semantic mode is one pass with
    /// every cross-attention replaced by DCA.
    #[allow(clippy::too_many_arguments)]
    pub fn compose_eps<F: Scalar>(
        &self,
        g: &mut Graph<F>,
        store: &ParameterStore<F>,
        z: Var,
        t: &[usize],
        ctx: &[Var],
        mode: Mode,
        agg: Aggregation,
    ) -> Result<Var> {
        let b = self.check(g, z, t, ctx)?;
        let k = ctx.len();
        if mode == Mode::Semantic || k == 1 {
            return self.forward(g, store, z, t, ctx, agg);
        }
        let zs = g.concat(&vec![z; k], 0)?;
        let ts: Vec<usize> = t.iter().copied().cycle().take(k * b).collect();
        let cs = g.concat(ctx, 0)?;
        let eps = self.forward(g, store, zs, &ts, &[cs], agg)?;
        let mut out = g.slice(eps, 0, 0, b)?;
        for i in 1..k {
            let part = g.slice(eps, 0, i * b, (i + 1) * b)?;
            out = g.add(out, part)?;
        }
        Ok(match agg {
            Aggregation::Sum => out,
            Aggregation::Mean => g.scale(out, F::from_f64_lossy(1.0 / k as f64))?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn setup() -> (Denoiser, ParameterStore<f32>, ChaCha8Rng) {
        let d = Denoiser::new(DenoiserConfig {
            blocks: 2,
            width: 16,
            heads: 4,
            time_dim: 8,
            ff_mult: 2,
        })
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut s = ParameterStore::new();
        d.init(&mut s, &mut rng).unwrap();
        (d, s, rng)
    }

    fn randn(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f32> {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| StandardNormal.sample(rng)).collect()).unwrap()
    }

    #[test]
    fn output_shape_and_determinism() {
        let (d, s, mut rng) = setup();
        let z = randn(&[3, 16, 16], &mut rng);
        let c = randn(&[12, 64], &mut rng);
        let run = || {
            let mut g = Graph::new();
            let zv = g.constant(z.clone()).unwrap();
            let cv = g.constant(c.clone()).unwrap();
            let e = d.forward(&mut g, &s, zv, &[1, 500, 1000], &[cv], Aggregation::Mean).unwrap();
            g.value(e).clone()
        };
        let e = run();
        assert_eq!(e.shape(), &[3, 16, 16]);
        assert_eq!(run(), e);
    }

    #[test]
    fn rejects_bad_shapes() {
        let (d, s, mut rng) = setup();
        let mut g = Graph::new();
        let z = g.constant(randn(&[2, 16, 16], &mut rng)).unwrap();
        let c = g.constant(randn(&[8, 64], &mut rng)).unwrap();
        let bad_c = g.constant(randn(&[4, 64], &mut rng)).unwrap();
        assert!(d.forward(&mut g, &s, z, &[1], &[c], Aggregation::Mean).is_err());
        assert!(d.forward(&mut g, &s, z, &[1, 2], &[bad_c], Aggregation::Mean).is_err());
        assert!(d.forward(&mut g, &s, z, &[1, 2], &[], Aggregation::Mean).is_err());
        let x = g.constant(randn(&[32, 16], &mut rng)).unwrap();
        assert!(d.dca(&mut g, &s, "den.block0.cross", x, &[], 2, Aggregation::Mean).is_err());
    }
}
