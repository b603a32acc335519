//! Reverse-process samplers over respaced schedules.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::model::DiffusionModel;
use super::schedule::NoiseSchedule;
use super::{DiffusionError, Result};
use crate::data::MotionSequence;
use crate::tensor::Tensor;
use crate::vae::{LatentCodec, LATENT_DIM, LATENT_LEN, LATENT_NUMEL};

/// Chains advanced together in one denoiser pass.
pub const CHAIN_BATCH: usize = 64;

fn chain_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    rng
}

/// One reverse chain per `(conds[i], seeds[i])`, returning standardised
/// latents `n x 16 x 16`. Chain `i` draws its initial latent and every
/// step's noise from its own seed only.
pub fn sample_latents(
    model: &DiffusionModel<f32>,
    schedule: &NoiseSchedule,
    conds: &[Vec<Tensor<f32>>],
    seeds: &[u64],
    steps: usize,
) -> Result<Vec<f32>> {
    if conds.len() != seeds.len() {
        return Err(DiffusionError::Shape(format!("{} condition sets for {} seeds", conds.len(), seeds.len())));
    }
    let plan = schedule.respace(steps)?;
    let mut out = Vec::with_capacity(seeds.len() * LATENT_NUMEL);
    for (cs, ss) in conds.chunks(CHAIN_BATCH).zip(seeds.chunks(CHAIN_BATCH)) {
        let b = ss.len();
        let mut rngs: Vec<ChaCha8Rng> = ss.iter().map(|&s| chain_rng(s)).collect();
        let mut z: Vec<f64> = rngs
            .iter_mut()
            .flat_map(|r| (0..LATENT_NUMEL).map(|_| StandardNormal.sample(r)).collect::<Vec<f64>>())
            .collect();
        for (i, st) in plan.iter().enumerate() {
            let zt = Tensor::from_f64(&[b, LATENT_LEN, LATENT_DIM], &z)?;
            let eps = model.predict(&zt, &vec![st.t; b], cs)?;
            let last = i + 1 == plan.len();
            let (inv, sigma) = (1.0 / st.alpha.sqrt(), st.beta_tilde.sqrt());
            for (c, rng) in rngs.iter_mut().enumerate() {
                for j in c * LATENT_NUMEL..(c + 1) * LATENT_NUMEL {
                    let mean = inv * (z[j] - st.eta * eps.data()[j] as f64);
                    z[j] = if last {
                        mean
                    } else {
                        let n: f64 = StandardNormal.sample(rng);
                        mean + sigma * n
                    };
                }
            }
        }
        out.extend(z.iter().map(|&v| v as f32));
    }
    Ok(out)
}

/// One motion per seed, each conditioned on the full concept set `cond`.
pub fn sample_holistic(
    model: &DiffusionModel<f32>,
    codec: &LatentCodec,
    schedule: &NoiseSchedule,
    cond: &[Tensor<f32>],
    steps: usize,
    seeds: &[u64],
) -> Result<Vec<MotionSequence>> {
    let conds = vec![cond.to_vec(); seeds.len()];
    let z = sample_latents(model, schedule, &conds, seeds, steps)?;
    Ok(codec.decode(&z)?)
}

/// K independent chains, chain `k` conditioned only on `cond[k]` and
/// seeded with `seeds[k]`.
pub fn sample_decomposed(
    model: &DiffusionModel<f32>,
    codec: &LatentCodec,
    schedule: &NoiseSchedule,
    cond: &[Tensor<f32>],
    steps: usize,
    seeds: &[u64],
) -> Result<Vec<MotionSequence>> {
    if cond.len() != seeds.len() {
        return Err(DiffusionError::Shape(format!("{} concepts for {} seeds", cond.len(), seeds.len())));
    }
    let conds: Vec<Vec<Tensor<f32>>> = cond.iter().map(|c| vec![c.clone()]).collect();
    let z = sample_latents(model, schedule, &conds, seeds, steps)?;
    Ok(codec.decode(&z)?)
}
