//! Contrastive motion / text feature extractor used by the metrics.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Result;
use crate::data::{Dataset, HolisticLabel, MotionSequence, Normalizer, Split, CHANNELS};
use crate::nn::{self, Conv1d};
use crate::tensor::checkpoint;
use crate::tensor::{AdamW, Graph, ParameterStore, Scalar, Tensor, Var};
use crate::text::{TextEncoder, Vocabulary, TEXT_DIM, TEXT_LEN};
use crate::util::{gather, shuffled_batches, JsonLog};
use crate::vae::{MOTION_LEN, MOTION_NUMEL};

pub const FEATURE_DIM: usize = 32;
const WIDTH: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluatorConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub temperature: f64,
    pub seed: u64,
}

impl Default for EvaluatorConfig {
    fn default() -> Self {
        Self {
            epochs: 15,
            batch_size: 64,
            lr: 1e-3,
            temperature: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluatorEpoch {
    pub epoch: usize,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct EvaluatorModel {
    pub store: ParameterStore<f32>,
    pub normalizer: Normalizer,
}

fn text_encoder() -> TextEncoder {
    TextEncoder::new("ev.text")
}

/// `[B, B * rows]` averaging matrix: row `b` averages rows `b*rows..(b+1)*rows`.
fn pool_matrix<F: Scalar>(b: usize, rows: usize) -> Tensor<F> {
    let w = F::from_f64_lossy(1.0 / rows as f64);
    let mut data = vec![F::zero(); b * b * rows];
    for i in 0..b {
        for r in 0..rows {
            data[i * b * rows + i * rows + r] = w;
        }
    }
    Tensor::new(&[b, b * rows], data).expect("pool shape")
}

fn l2_normalize<F: Scalar>(g: &mut Graph<F>, x: Var) -> Result<Var> {
    let d = *g.shape(x).last().expect("rank 2");
    let sq = g.square(x)?;
    let s = g.sum_last(sq)?;
    let s = g.add_scalar(s, F::from_f64_lossy(1e-8))?;
    let n = g.sqrt(s)?;
    let n = g.expand_last(n, d)?;
    Ok(g.div(x, n)?)
}

pub fn init_evaluator<F: Scalar>(store: &mut ParameterStore<F>, rng: &mut impl rand::Rng) -> Result<()> {
    Conv1d::SAME3.init(store, "ev.motion.in", CHANNELS, WIDTH, rng)?;
    Conv1d::DOWN2.init(store, "ev.motion.down1", WIDTH, WIDTH, rng)?;
    Conv1d::DOWN2.init(store, "ev.motion.down2", WIDTH, WIDTH, rng)?;
    nn::init_linear(store, "ev.motion.head", WIDTH, FEATURE_DIM, rng)?;
    text_encoder().init(store, &Vocabulary::default(), rng)?;
    nn::init_linear(store, "ev.text.head", TEXT_DIM, FEATURE_DIM, rng)?;
    Ok(())
}

/// Unit-norm motion features `[B, 32]` for normalised motion `[B, 64, 6]`.
pub fn motion_forward<F: Scalar>(g: &mut Graph<F>, store: &ParameterStore<F>, x: Var) -> Result<Var> {
    let b = g.shape(x)[0];
    let h = Conv1d::SAME3.forward(g, store, "ev.motion.in", x)?;
    let h = g.gelu(h)?;
    let h = Conv1d::DOWN2.forward(g, store, "ev.motion.down1", h)?;
    let h = g.gelu(h)?;
    let h = Conv1d::DOWN2.forward(g, store, "ev.motion.down2", h)?;
    let h = g.gelu(h)?;
    let len = g.shape(h)[1];
    let h = g.reshape(h, &[b * len, WIDTH])?;
    let pool = g.constant(pool_matrix(b, len))?;
    let h = g.matmul(pool, h)?;
    let f = nn::linear(g, store, "ev.motion.head", h)?;
    l2_normalize(g, f)
}

/// Unit-norm text features `[B, 32]` of holistic labels.
pub fn text_forward<F: Scalar>(g: &mut Graph<F>, store: &ParameterStore<F>, labels: &[HolisticLabel]) -> Result<Var> {
    let vocab = Vocabulary::default();
    let mut ids = Vec::with_capacity(labels.len() * TEXT_LEN);
    for l in labels {
        ids.extend(vocab.text_ids(&l.text())?);
    }
    let h = text_encoder().forward(g, store, &ids)?;
    let pool = g.constant(pool_matrix(labels.len(), TEXT_LEN))?;
    let h = g.matmul(pool, h)?;
    let f = nn::linear(g, store, "ev.text.head", h)?;
    l2_normalize(g, f)
}

/// Symmetric InfoNCE with soft targets spread uniformly over same-label
/// entries of the batch.
pub fn contrastive_loss<F: Scalar>(
    g: &mut Graph<F>,
    store: &ParameterStore<F>,
    x: Var,
    labels: &[HolisticLabel],
    temperature: f64,
) -> Result<Var> {
    let b = labels.len();
    let m = motion_forward(g, store, x)?;
    let t = text_forward(g, store, labels)?;
    let tt = g.transpose(t)?;
    let s = g.matmul(m, tt)?;
    let s = g.scale(s, F::from_f64_lossy(1.0 / temperature))?;
    let mut target = vec![F::zero(); b * b];
    for i in 0..b {
        let same: Vec<usize> = (0..b).filter(|&j| labels[j] == labels[i]).collect();
        let w = F::from_f64_lossy(1.0 / same.len() as f64);
        for j in same {
            target[i * b + j] = w;
        }
    }
    // the target is symmetric, so it serves both directions
    let y = g.constant(Tensor::new(&[b, b], target)?)?;
    let st = g.transpose(s)?;
    let mut total = None;
    for logits in [s, st] {
        let lp = g.log_softmax(logits)?;
        let ce = g.mul(lp, y)?;
        let ce = g.sum(ce)?;
        let ce = g.scale(ce, F::from_f64_lossy(-0.5 / b as f64))?;
        total = Some(match total {
            None => ce,
            Some(a) => g.add(a, ce)?,
        });
    }
    Ok(total.expect("two directions"))
}

impl EvaluatorModel {
    pub fn untrained(seed: u64, normalizer: Normalizer) -> Result<Self> {
        let mut store = ParameterStore::new();
        init_evaluator(&mut store, &mut ChaCha8Rng::seed_from_u64(seed))?;
        Ok(Self { store, normalizer })
    }

    pub fn load(path: &Path, normalizer: Normalizer) -> Result<Self> {
        Ok(Self {
            store: checkpoint::load(path)?,
            normalizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(checkpoint::save(&self.store, path)?)
    }

    pub fn motion_features(&self, motions: &[MotionSequence]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(motions.len());
        for chunk in motions.chunks(256) {
            let data: Vec<f32> = chunk.iter().flat_map(|m| self.normalizer.normalize(m)).collect();
            let mut g = Graph::new();
            let x = g.constant(Tensor::new(&[chunk.len(), MOTION_LEN, CHANNELS], data)?)?;
            let f = motion_forward(&mut g, &self.store, x)?;
            out.extend(g.value(f).data().chunks(FEATURE_DIM).map(|r| r.iter().map(|&v| v as f64).collect()));
        }
        Ok(out)
    }

    pub fn text_features(&self, labels: &[HolisticLabel]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(labels.len());
        for chunk in labels.chunks(256) {
            let mut g = Graph::new();
            let f = text_forward(&mut g, &self.store, chunk)?;
            out.extend(g.value(f).data().chunks(FEATURE_DIM).map(|r| r.iter().map(|&v| v as f64).collect()));
        }
        Ok(out)
    }

    /// Fraction of motions whose own label's text is strictly the most
    /// cosine-similar among all holistic labels.
    pub fn matched_fraction(&self, motions: &[MotionSequence], labels: &[HolisticLabel]) -> Result<f64> {
        let grid = HolisticLabel::grid();
        let texts = self.text_features(&grid)?;
        let feats = self.motion_features(motions)?;
        let cos = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let hits = feats
            .iter()
            .zip(labels)
            .filter(|(f, l)| {
                let own = cos(f, &texts[l.index()]);
                grid.iter().filter(|o| *o != *l).all(|o| cos(f, &texts[o.index()]) < own)
            })
            .count();
        Ok(hits as f64 / motions.len() as f64)
    }
}

pub fn train_evaluator(data: &Dataset, cfg: &EvaluatorConfig, log_path: Option<&Path>) -> Result<(EvaluatorModel, Vec<EvaluatorEpoch>)> {
    let norm = data.normalizer();
    let train: Vec<&crate::data::MotionSample> = data.split(Split::Train).collect();
    let flat: Vec<f32> = train.iter().flat_map(|s| norm.normalize(&s.motion)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = EvaluatorModel::untrained(cfg.seed, norm)?;
    let opt = AdamW::default();
    let mut log = JsonLog::create(log_path)?;
    let mut history = Vec::new();
    for epoch in 1..=cfg.epochs {
        let (mut sum, mut n) = (0.0, 0usize);
        for ids in shuffled_batches(train.len(), cfg.batch_size, &mut rng) {
            let labels: Vec<HolisticLabel> = ids.iter().map(|&i| train[i].label).collect();
            let x = Tensor::new(&[ids.len(), MOTION_LEN, CHANNELS], gather(&flat, MOTION_NUMEL, &ids))?;
            let mut g = Graph::new();
            let xv = g.constant(x)?;
            let loss = contrastive_loss(&mut g, &model.store, xv, &labels, cfg.temperature)?;
            let grads = g.backward(loss)?.into_named();
            opt.step(&mut model.store, &grads, cfg.lr)?;
            sum += g.value(loss).item() as f64 * ids.len() as f64;
            n += ids.len();
        }
        let rec = EvaluatorEpoch { epoch, loss: sum / n as f64 };
        log::info!("evaluator epoch {epoch}: loss {:.4}", rec.loss);
        log.write(&rec)?;
        history.push(rec);
    }
    Ok((model, history))
}
