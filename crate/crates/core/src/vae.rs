//! Convolutional motion VAE with two stride-2 temporal downsamplings.
//!
//! `[B, 64, 6]` normalised motion maps to a `[B, 16, 16]` Gaussian posterior
//! and back. Diffusion works on the posterior mean standardised with
//! per-dimension train statistics, stored next to the weights as frozen
//! `vae.latent_mean` / `vae.latent_std`.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Dataset, MotionSequence, Normalizer, Split, CHANNELS};
use crate::nn::Conv1d;
use crate::tensor::checkpoint::{self, CheckpointError};
use crate::tensor::{AdamW, Graph, ParameterStore, Scalar, Tensor, TensorError, Var};
use crate::util::{gather, shuffled_batches, JsonLog};

pub const MOTION_LEN: usize = 64;
pub const LATENT_LEN: usize = MOTION_LEN / 4;
pub const LATENT_DIM: usize = 16;
pub const LATENT_NUMEL: usize = LATENT_LEN * LATENT_DIM;
pub const MOTION_NUMEL: usize = MOTION_LEN * CHANNELS;

#[derive(Debug, Error)]
pub enum VaeError {
    #[error("vae: expected input {expected:?}, got {got:?}")]
    Shape { expected: Vec<usize>, got: Vec<usize> },
    #[error("vae training diverged at epoch {epoch}: {source}")]
    Diverged { epoch: usize, source: TensorError },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, VaeError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaeConfig {
    pub channels: usize,
    pub kl_weight: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Replaces `lr` for the last third of the epochs.
    pub lr_final: f64,
    pub seed: u64,
}

impl VaeConfig {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if 3 * epoch > 2 * self.epochs {
            self.lr_final
        } else {
            self.lr
        }
    }
}

impl Default for VaeConfig {
    fn default() -> Self {
        Self {
            channels: 64,
            kl_weight: 1e-3,
            epochs: 30,
            batch_size: 64,
            lr: 1e-3,
            lr_final: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Posterior {
    pub mu: Var,
    pub logvar: Var,
}

/// Layer layout of the VAE. Parameters live under `vae.`.
#[derive(Debug, Clone, Copy)]
pub struct Vae {
    pub channels: usize,
}

impl Vae {
    pub fn new(channels: usize) -> Self {
        Self { channels }
    }

    /// Channel width recovered from a checkpoint.
    pub fn from_store<F: Scalar>(store: &ParameterStore<F>) -> Result<Self> {
        let w = store
            .get("vae.enc.in.w")
            .ok_or_else(|| TensorError::UnknownParam("vae.enc.in.w".into()))?;
        Ok(Self::new(w.shape()[1]))
    }

    pub fn init<F: Scalar>(&self, store: &mut ParameterStore<F>, rng: &mut impl rand::Rng) -> Result<()> {
        let c = self.channels;
        Conv1d::SAME3.init(store, "vae.enc.in", CHANNELS, c, rng)?;
        Conv1d::DOWN2.init(store, "vae.enc.down1", c, c, rng)?;
        Conv1d::DOWN2.init(store, "vae.enc.down2", c, c, rng)?;
        Conv1d::SAME3.init(store, "vae.enc.out", c, 2 * LATENT_DIM, rng)?;
        Conv1d::SAME3.init(store, "vae.dec.in", LATENT_DIM, c, rng)?;
        Conv1d::SAME3.init(store, "vae.dec.up1", c, c, rng)?;
        Conv1d::SAME3.init(store, "vae.dec.up2", c, c, rng)?;
        Conv1d::SAME3.init(store, "vae.dec.out", c, CHANNELS, rng)?;
        Ok(())
    }

    fn expect(g: &Graph<impl Scalar>, x: Var, tail: [usize; 2]) -> Result<usize> {
        let s = g.shape(x);
        if s.len() != 3 || s[1..] != tail {
            return Err(VaeError::Shape {
                expected: vec![0, tail[0], tail[1]],
                got: s.to_vec(),
            });
        }
        Ok(s[0])
    }

    /// `x` is `[B, 64, 6]` normalised motion.
    pub fn encode<F: Scalar>(&self, g: &mut Graph<F>, store: &ParameterStore<F>, x: Var) -> Result<Posterior> {
        Self::expect(g, x, [MOTION_LEN, CHANNELS])?;
        let h = Conv1d::SAME3.forward(g, store, "vae.enc.in", x)?;
        let h = g.gelu(h)?;
        let h = Conv1d::DOWN2.forward(g, store, "vae.enc.down1", h)?;
        let h = g.gelu(h)?;
        let h = Conv1d::DOWN2.forward(g, store, "vae.enc.down2", h)?;
        let h = g.gelu(h)?;
        let out = Conv1d::SAME3.forward(g, store, "vae.enc.out", h)?;
        let mu = g.slice(out, 2, 0, LATENT_DIM)?;
        let logvar = g.slice(out, 2, LATENT_DIM, 2 * LATENT_DIM)?;
        Ok(Posterior { mu, logvar })
    }

    /// `z` is `[B, 16, 16]`; output `[B, 64, 6]` normalised motion.
    pub fn decode<F: Scalar>(&self, g: &mut Graph<F>, store: &ParameterStore<F>, z: Var) -> Result<Var> {
        Self::expect(g, z, [LATENT_LEN, LATENT_DIM])?;
        let h = Conv1d::SAME3.forward(g, store, "vae.dec.in", z)?;
        let h = g.gelu(h)?;
        let h = g.upsample1d(h, 2)?;
        let h = Conv1d::SAME3.forward(g, store, "vae.dec.up1", h)?;
        let h = g.gelu(h)?;
        let h = g.upsample1d(h, 2)?;
        let h = Conv1d::SAME3.forward(g, store, "vae.dec.up2", h)?;
        let h = g.gelu(h)?;
        Ok(Conv1d::SAME3.forward(g, store, "vae.dec.out", h)?)
    }

    /// Training loss: reconstruction MSE + `kl_weight` * mean per-element KL.
    pub fn loss<F: Scalar>(
        &self,
        g: &mut Graph<F>,
        store: &ParameterStore<F>,
        x: Var,
        noise: Tensor<F>,
        kl_weight: f64,
    ) -> Result<(Var, Var, Var)> {
        let post = self.encode(g, store, x)?;
        let half = g.scale(post.logvar, F::from_f64_lossy(0.5))?;
        let std = g.exp(half)?;
        let eps = g.constant(noise)?;
        let jitter = g.mul(std, eps)?;
        let z = g.add(post.mu, jitter)?;
        let recon = self.decode(g, store, z)?;
        let rec = g.mse(recon, x)?;
        let kl = kl_divergence(g, post.mu, post.logvar)?;
        let wkl = g.scale(kl, F::from_f64_lossy(kl_weight))?;
        let total = g.add(rec, wkl)?;
        Ok((total, rec, kl))
    }
}

/// Mean over elements of `0.5 * (mu^2 + exp(logvar) - 1 - logvar)`.
pub fn kl_divergence<F: Scalar>(g: &mut Graph<F>, mu: Var, logvar: Var) -> std::result::Result<Var, TensorError> {
    let mu2 = g.square(mu)?;
    let var = g.exp(logvar)?;
    let s = g.add(mu2, var)?;
    let s = g.sub(s, logvar)?;
    let s = g.add_scalar(s, -F::one())?;
    let m = g.mean(s)?;
    g.scale(m, F::from_f64_lossy(0.5))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VaeEpoch {
    pub epoch: usize,
    pub recon: f64,
    pub kl: f64,
}

/// Frozen VAE plus latent standardisation, ready for encode/decode.
#[derive(Debug, Clone)]
pub struct LatentCodec {
    pub vae: Vae,
    pub store: ParameterStore<f32>,
    pub normalizer: Normalizer,
}

impl LatentCodec {
    pub fn new(store: ParameterStore<f32>, normalizer: Normalizer) -> Result<Self> {
        let vae = Vae::from_store(&store)?;
        for n in ["vae.latent_mean", "vae.latent_std"] {
            if !store.contains(n) {
                return Err(TensorError::UnknownParam(n.into()).into());
            }
        }
        Ok(Self { vae, store, normalizer })
    }

    pub fn load(path: &Path, normalizer: Normalizer) -> Result<Self> {
        Self::new(checkpoint::load(path)?, normalizer)
    }

    fn stats(&self) -> (&[f32], &[f32]) {
        (
            self.store.get("vae.latent_mean").unwrap().data(),
            self.store.get("vae.latent_std").unwrap().data(),
        )
    }

    /// Raw posterior means `[n, 16, 16]` for normalised motions `n x 64 x 6`.
    pub fn posterior_mean(&self, normalized: &[f32]) -> Result<Vec<f32>> {
        let n = normalized.len() / MOTION_NUMEL;
        let mut out = Vec::with_capacity(n * LATENT_NUMEL);
        for chunk in normalized.chunks(256 * MOTION_NUMEL) {
            let b = chunk.len() / MOTION_NUMEL;
            let mut g = Graph::new();
            let x = g.constant(Tensor::new(&[b, MOTION_LEN, CHANNELS], chunk.to_vec())?)?;
            let post = self.vae.encode(&mut g, &self.store, x)?;
            out.extend_from_slice(g.value(post.mu).data());
        }
        Ok(out)
    }

    /// Standardised diffusion targets for normalised motions.
    pub fn encode(&self, normalized: &[f32]) -> Result<Vec<f32>> {
        let mut mu = self.posterior_mean(normalized)?;
        let (mean, std) = self.stats();
        for (i, v) in mu.iter_mut().enumerate() {
            let d = i % LATENT_DIM;
            *v = (*v - mean[d]) / std[d];
        }
        Ok(mu)
    }

    /// Decode standardised latents `[n, 16, 16]` to normalised motion.
    pub fn decode_normalized(&self, latents: &[f32]) -> Result<Vec<f32>> {
        let (mean, std) = self.stats();
        let z: Vec<f32> = latents
            .iter()
            .enumerate()
            .map(|(i, &v)| v * std[i % LATENT_DIM] + mean[i % LATENT_DIM])
            .collect();
        let n = z.len() / LATENT_NUMEL;
        let mut g = Graph::new();
        let zv = g.constant(Tensor::new(&[n, LATENT_LEN, LATENT_DIM], z)?)?;
        let out = self.vae.decode(&mut g, &self.store, zv)?;
        Ok(g.value(out).data().to_vec())
    }

    /// Decode standardised latents to raw motions.
    pub fn decode(&self, latents: &[f32]) -> Result<Vec<MotionSequence>> {
        let flat = self.decode_normalized(latents)?;
        Ok(flat
            .chunks(MOTION_NUMEL)
            .map(|c| self.normalizer.denormalize(MOTION_LEN, c).expect("fixed motion size"))
            .collect())
    }
}

/// Normalised motions of a split, flattened `n x 64 x 6`.
pub fn normalized_split(data: &Dataset, split: Split) -> Vec<f32> {
    let norm = data.normalizer();
    data.split(split).flat_map(|s| norm.normalize(&s.motion)).collect()
}

pub struct TrainedVae {
    pub store: ParameterStore<f32>,
    pub log: Vec<VaeEpoch>,
}

/// Train on the normalised train split. When `checkpoint_path` is given the
/// weights are saved after every epoch, so a diverged run leaves the last
/// good epoch on disk.
pub fn train_vae(data: &Dataset, cfg: &VaeConfig, log_path: Option<&Path>, checkpoint_path: Option<&Path>) -> Result<TrainedVae> {
    let train = normalized_split(data, Split::Train);
    let n = train.len() / MOTION_NUMEL;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let vae = Vae::new(cfg.channels);
    let mut store = ParameterStore::new();
    vae.init(&mut store, &mut rng)?;
    let opt = AdamW::default();
    let mut log = JsonLog::create(log_path)?;
    let mut history = Vec::new();
    for epoch in 1..=cfg.epochs {
        let (mut rec_sum, mut kl_sum, mut count) = (0.0, 0.0, 0usize);
        for ids in shuffled_batches(n, cfg.batch_size, &mut rng) {
            let b = ids.len();
            let x = Tensor::new(&[b, MOTION_LEN, CHANNELS], gather(&train, MOTION_NUMEL, &ids))?;
            let noise: Vec<f32> = (0..b * LATENT_NUMEL).map(|_| StandardNormal.sample(&mut rng)).collect();
            let step = (|| -> std::result::Result<_, TensorError> {
                let mut g = Graph::new();
                let xv = g.constant(x)?;
                let (total, rec, kl) = vae
                    .loss(&mut g, &store, xv, Tensor::new(&[b, LATENT_LEN, LATENT_DIM], noise)?, cfg.kl_weight)
                    .map_err(|e| match e {
                        VaeError::Tensor(t) => t,
                        other => TensorError::Invalid {
                            op: "vae_loss",
                            msg: other.to_string(),
                        },
                    })?;
                let grads = g.backward(total)?.into_named();
                Ok((grads, g.value(rec).item() as f64, g.value(kl).item() as f64))
            })();
            let (grads, rec, kl) = step.map_err(|source| VaeError::Diverged { epoch, source })?;
            opt.step(&mut store, &grads, cfg.lr_at(epoch))?;
            rec_sum += rec * b as f64;
            kl_sum += kl * b as f64;
            count += b;
        }
        let rec = VaeEpoch {
            epoch,
            recon: rec_sum / count as f64,
            kl: kl_sum / count as f64,
        };
        log::info!("vae epoch {epoch}: recon {:.5} kl {:.4}", rec.recon, rec.kl);
        log.write(&rec)?;
        history.push(rec);
        if let Some(p) = checkpoint_path {
            checkpoint::save(&with_latent_stats(&vae, &store, &train)?, p)?;
        }
    }
    let store = with_latent_stats(&vae, &store, &train)?;
    Ok(TrainedVae { store, log: history })
}

/// Copy of `store` with frozen per-dimension posterior-mean statistics over `train`.
fn with_latent_stats(vae: &Vae, store: &ParameterStore<f32>, train: &[f32]) -> Result<ParameterStore<f32>> {
    let mut out = store.clone();
    let n = train.len() / MOTION_NUMEL;
    let mut sum = [0.0f64; LATENT_DIM];
    let mut sq = [0.0f64; LATENT_DIM];
    for chunk in train.chunks(256 * MOTION_NUMEL) {
        let b = chunk.len() / MOTION_NUMEL;
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(&[b, MOTION_LEN, CHANNELS], chunk.to_vec())?)?;
        let post = vae.encode(&mut g, store, x)?;
        for (i, &v) in g.value(post.mu).data().iter().enumerate() {
            sum[i % LATENT_DIM] += v as f64;
            sq[i % LATENT_DIM] += (v as f64).powi(2);
        }
    }
    let count = (n * LATENT_LEN) as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / count).collect();
    let std: Vec<f64> = sq
        .iter()
        .zip(&mean)
        .map(|(q, m)| (q / count - m * m).max(0.0).sqrt().max(1e-4))
        .collect();
    out.set("vae.latent_mean", Tensor::from_f64(&[LATENT_DIM], &mean)?);
    out.set("vae.latent_std", Tensor::from_f64(&[LATENT_DIM], &std)?);
    out.freeze("vae.latent_");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::grad_check_params;

    fn kl_value(mu: f64, logvar: f64) -> f64 {
        let mut g = Graph::<f64>::new();
        let m = g.constant(Tensor::scalar(mu)).unwrap();
        let l = g.constant(Tensor::scalar(logvar)).unwrap();
        let k = kl_divergence(&mut g, m, l).unwrap();
        g.value(k).item()
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_value(0.0, 0.0), 0.0);
        assert!((kl_value(1.0, 0.0) - 0.5).abs() < 1e-15);
        // closed form 0.5 (mu^2 + sigma^2 - 1 - log sigma^2)
        let (mu, lv) = (-0.3f64, 0.8f64);
        assert!((kl_value(mu, lv) - 0.5 * (mu * mu + lv.exp() - 1.0 - lv)).abs() < 1e-15);
    }

    #[test]
    fn kl_nonnegative_with_unique_zero() {
        for mu in [-2.0, -0.5, 0.0, 0.1, 3.0] {
            for lv in [-3.0, -0.2, 0.0, 0.4, 2.0] {
                let k = kl_value(mu, lv);
                assert!(k >= 0.0);
                assert_eq!(k == 0.0, mu == 0.0 && lv == 0.0, "mu {mu} lv {lv}");
            }
        }
    }

    fn tiny() -> (Vae, ParameterStore<f64>) {
        let vae = Vae::new(4);
        let mut s = ParameterStore::new();
        vae.init(&mut s, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        (vae, s)
    }

    #[test]
    fn shapes_and_determinism() {
        let (vae, s) = tiny();
        let x = Tensor::from_f64(&[2, 64, 6], &(0..768).map(|i| (i as f64 * 0.01).sin()).collect::<Vec<_>>()).unwrap();
        let run = || {
            let mut g = Graph::new();
            let xv = g.constant(x.clone()).unwrap();
            let p = vae.encode(&mut g, &s, xv).unwrap();
            let d = vae.decode(&mut g, &s, p.mu).unwrap();
            (g.value(p.mu).clone(), g.value(p.logvar).clone(), g.value(d).clone())
        };
        let (mu, lv, rec) = run();
        assert_eq!(mu.shape(), &[2, 16, 16]);
        assert_eq!(lv.shape(), &[2, 16, 16]);
        assert_eq!(rec.shape(), &[2, 64, 6]);
        assert_eq!(run(), (mu, lv, rec));

        let mut g = Graph::new();
        let bad = g.constant(Tensor::zeros(&[1, 60, 6])).unwrap();
        assert!(matches!(vae.encode(&mut g, &s, bad), Err(VaeError::Shape { .. })));
        let bad = g.constant(Tensor::zeros(&[1, 16, 8])).unwrap();
        assert!(matches!(vae.decode(&mut g, &s, bad), Err(VaeError::Shape { .. })));
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let (vae, s) = tiny();
        let x = Tensor::from_f64(&[1, 64, 6], &(0..384).map(|i| (i as f64 * 0.13).cos()).collect::<Vec<_>>()).unwrap();
        let noise = Tensor::from_f64(&[1, 16, 16], &(0..256).map(|i| (i as f64 * 0.71).sin()).collect::<Vec<_>>()).unwrap();
        let r = grad_check_params(
            |g, s| {
                let xv = g.constant(x.clone())?;
                vae.loss(g, s, xv, noise.clone(), 0.1).map(|l| l.0).map_err(|e| match e {
                    VaeError::Tensor(t) => t,
                    e => panic!("{e}"),
                })
            },
            &s,
            1e-5,
            6,
        )
        .unwrap();
        assert!(r.max_rel_err <= 1e-5, "{r:?}");
    }
}
