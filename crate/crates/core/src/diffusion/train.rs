use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::config::{TrainConfig, Variant};
use super::model::{Batch, DiffusionModel};
use super::schedule::NoiseSchedule;
use super::{DiffusionError, Result};
use crate::data::HolisticLabel;
use crate::tensor::{AdamW, Graph, Scalar, Tensor};
use crate::util::JsonLog;
use crate::vae::{LATENT_DIM, LATENT_LEN, LATENT_NUMEL};

/// Per-step loss breakdown. Terms a variant does not use are 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub lr: f64,
    pub mse: f64,
    pub ortho: f64,
    pub sc: f64,
    pub total: f64,
}

/// Standardised latents `n x 16 x 16` and their labels.
#[derive(Debug, Clone, Copy)]
pub struct TrainSet<'a> {
    pub latents: &'a [f32],
    pub labels: &'a [HolisticLabel],
}

impl<'a> TrainSet<'a> {
    pub fn new(latents: &'a [f32], labels: &'a [HolisticLabel]) -> Result<Self> {
        if labels.is_empty() || latents.len() != labels.len() * LATENT_NUMEL {
            return Err(DiffusionError::Shape(format!(
                "{} latent values for {} labels",
                latents.len(),
                labels.len()
            )));
        }
        Ok(Self { latents, labels })
    }
}

/// Draw samples, timesteps `t ~ U{1..T}`, noise, and the Exp replacement
/// flags (`Bernoulli(tau)` per sample), then noise the latents.
pub fn sample_batch<F: Scalar>(
    data: TrainSet<'_>,
    cfg: &TrainConfig,
    schedule: &NoiseSchedule,
    rng: &mut impl Rng,
) -> Result<Batch<F>> {
    let b = cfg.batch_size;
    let ids: Vec<usize> = (0..b).map(|_| rng.random_range(0..data.labels.len())).collect();
    let t: Vec<usize> = (0..b).map(|_| rng.random_range(1..=schedule.len())).collect();
    let eps: Vec<f64> = (0..b * LATENT_NUMEL).map(|_| StandardNormal.sample(rng)).collect();
    let holistic = match cfg.variant.variant {
        Variant::Exp => {
            let coin = Bernoulli::new(cfg.variant.tau).map_err(|e| DiffusionError::Config(e.to_string()))?;
            (0..b).map(|_| coin.sample(rng)).collect()
        }
        _ => vec![false; b],
    };
    let mut z_t = Vec::with_capacity(b * LATENT_NUMEL);
    for (i, &id) in ids.iter().enumerate() {
        let ab = schedule.alpha_bar_at(t[i]);
        let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
        let z0 = &data.latents[id * LATENT_NUMEL..(id + 1) * LATENT_NUMEL];
        let e = &eps[i * LATENT_NUMEL..(i + 1) * LATENT_NUMEL];
        z_t.extend(z0.iter().zip(e).map(|(&z, &e)| sa * z as f64 + sn * e));
    }
    let shape = [b, LATENT_LEN, LATENT_DIM];
    Ok(Batch {
        z_t: Tensor::from_f64(&shape, &z_t)?,
        t,
        eps: Tensor::from_f64(&shape, &eps)?,
        labels: ids.iter().map(|&i| data.labels[i]).collect(),
        holistic,
    })
}

/// Forward, backward and one optimizer update.
pub fn train_step(model: &mut DiffusionModel<f32>, opt: &AdamW, batch: &Batch<f32>, step: usize) -> Result<StepLog> {
    let lr = model.config.lr_at(step);
    let mut g = Graph::new();
    let run = |g: &mut Graph<f32>| -> Result<_> {
        let l = model.loss(g, &model.store, batch)?;
        let grads = g.backward(l.total)?.into_named();
        Ok((l, grads))
    };
    let (l, grads) = run(&mut g).map_err(|e| match e {
        DiffusionError::Tensor(source) => DiffusionError::NonFinite { step, source },
        e => e,
    })?;
    let val = |v| g.value(v).item() as f64;
    let log = StepLog {
        step,
        lr,
        mse: val(l.mse),
        ortho: l.ortho.map(|o| val(o.loss)).unwrap_or(0.0),
        sc: l.sc.map(val).unwrap_or(0.0),
        total: val(l.total),
    };
    opt.step(&mut model.store, &grads, lr)?;
    Ok(log)
}

/// RNG for the training data stream, independent of parameter init.
pub fn data_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

/// Full training run; `on_step` sees every step log (for checkpoints or
/// progress), returning an error aborts.
pub fn train_diffusion(
    data: TrainSet<'_>,
    cfg: &TrainConfig,
    schedule: &NoiseSchedule,
    log: &mut JsonLog,
    mut on_step: impl FnMut(&DiffusionModel<f32>, &StepLog) -> Result<()>,
) -> Result<(DiffusionModel<f32>, Vec<StepLog>)> {
    cfg.validate()?;
    let mut model = DiffusionModel::init(cfg, &mut ChaCha8Rng::seed_from_u64(cfg.seed))?;
    let mut rng = data_rng(cfg.seed);
    let opt = AdamW::default();
    let mut history = Vec::with_capacity(cfg.steps);
    for step in 1..=cfg.steps {
        let batch = sample_batch(data, cfg, schedule, &mut rng)?;
        let rec = train_step(&mut model, &opt, &batch, step)?;
        if step % cfg.log_every.max(1) == 0 || step == 1 || step == cfg.steps {
            log::info!(
                "step {step}: mse {:.4} ortho {:.4} sc {:.4} total {:.4}",
                rec.mse,
                rec.ortho,
                rec.sc,
                rec.total
            );
        }
        log.write(&rec)?;
        on_step(&model, &rec)?;
        history.push(rec);
    }
    Ok((model, history))
}
