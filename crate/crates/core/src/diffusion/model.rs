//! Trainable model state: frozen text encoder, denoiser, and the
//! OSS / SC projection heads, with per-variant condition construction.

use std::path::{Path, PathBuf};

use rand::Rng;

use super::config::{TrainConfig, Variant};
use super::denoiser::Denoiser;
use super::{DiffusionError, Result};
use crate::data::{Concept, ConceptText, HolisticLabel};
use crate::tensor::checkpoint;
use crate::tensor::{Graph, ParameterStore, Scalar, Tensor, Var};
use crate::text::{self, OrthoLoss, TextEncoder, Vocabulary};

pub const TEXT_PREFIX: &str = "text";
pub const PROJ_PREFIX: &str = "proj";

/// Frozen embeddings `[TEXT_LEN, TEXT_DIM]` of every concept and every
/// holistic label.
#[derive(Debug, Clone)]
pub struct TextBank<F: Scalar> {
    /// Indexed by `Concept as usize`.
    pub concept: Vec<Tensor<F>>,
    /// Indexed by [`HolisticLabel::index`].
    pub holistic: Vec<Tensor<F>>,
}

impl<F: Scalar> TextBank<F> {
    pub fn build(store: &ParameterStore<F>) -> Result<Self> {
        let enc = TextEncoder::new(TEXT_PREFIX);
        let vocab = Vocabulary::default();
        let concept = Concept::ALL
            .iter()
            .map(|&c| enc.encode(store, &vocab, &ConceptText::single(c)))
            .collect::<std::result::Result<_, _>>()?;
        let holistic = HolisticLabel::grid()
            .iter()
            .map(|l| enc.encode(store, &vocab, &l.text()))
            .collect::<std::result::Result<_, _>>()?;
        Ok(Self { concept, holistic })
    }

    pub fn concept(&self, c: Concept) -> &Tensor<F> {
        &self.concept[c as usize]
    }

    pub fn holistic(&self, l: HolisticLabel) -> &Tensor<F> {
        &self.holistic[l.index()]
    }
}

/// One training batch. `z_t` is already noised.
#[derive(Debug, Clone)]
pub struct Batch<F: Scalar> {
    pub z_t: Tensor<F>,
    pub t: Vec<usize>,
    pub eps: Tensor<F>,
    pub labels: Vec<HolisticLabel>,
    /// Exp only: sample trains on its duplicated holistic text.
    pub holistic: Vec<bool>,
}

#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub total: Var,
    pub mse: Var,
    pub ortho: Option<OrthoLoss>,
    pub sc: Option<Var>,
}

#[derive(Debug, Clone)]
pub struct DiffusionModel<F: Scalar> {
    pub config: TrainConfig,
    pub denoiser: Denoiser,
    pub store: ParameterStore<F>,
    pub bank: TextBank<F>,
}

fn stack<F: Scalar>(g: &mut Graph<F>, parts: Vec<&Tensor<F>>) -> Result<Var> {
    let owned: Vec<Tensor<F>> = parts.into_iter().cloned().collect();
    Ok(g.constant(Tensor::stack0(&owned)?)?)
}

impl<F: Scalar> DiffusionModel<F> {
    pub fn init(config: &TrainConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let denoiser = Denoiser::new(config.denoiser.clone())?;
        let mut store = ParameterStore::new();
        TextEncoder::new(TEXT_PREFIX).init(&mut store, &Vocabulary::default(), rng)?;
        store.freeze(&format!("{TEXT_PREFIX}."));
        denoiser.init(&mut store, rng)?;
        match config.variant.variant {
            Variant::Exp => {}
            Variant::Oss => text::init_project_oss(&mut store, PROJ_PREFIX, config.variant.k, rng)?,
            Variant::Sc => text::init_project_sc(&mut store, PROJ_PREFIX, config.variant.k, rng)?,
        }
        Self::from_store(config.clone(), store)
    }

    /// Rebuild from parameters; the text encoder is re-frozen.
    pub fn from_store(config: TrainConfig, mut store: ParameterStore<F>) -> Result<Self> {
        config.validate()?;
        store.freeze(&format!("{TEXT_PREFIX}."));
        let bank = TextBank::build(&store)?;
        Ok(Self {
            denoiser: Denoiser::new(config.denoiser.clone())?,
            config,
            store,
            bank,
        })
    }

    pub fn cast<G: Scalar>(&self) -> DiffusionModel<G> {
        DiffusionModel::from_store(self.config.clone(), self.store.cast()).expect("validated config")
    }

    /// Projected partition of holistic embeddings `[B * TEXT_LEN, TEXT_DIM]`.
    fn project(&self, g: &mut Graph<F>, store: &ParameterStore<F>, hol: Var) -> Result<Vec<Var>> {
        let subs = text::partition(g, hol, self.config.variant.k)?;
        Ok(match self.config.variant.variant {
            Variant::Oss => text::project_oss(g, store, PROJ_PREFIX, &subs)?,
            Variant::Sc => text::project_sc(g, store, PROJ_PREFIX, &subs)?,
            Variant::Exp => unreachable!("Exp conditions are not projected"),
        })
    }

    /// Ground-truth decomposed set C^P for a batch of labels.
    fn cp(&self, g: &mut Graph<F>, labels: &[HolisticLabel]) -> Result<Vec<Var>> {
        let paths = labels.iter().map(|l| self.bank.concept(l.path)).collect();
        let gestures = labels.iter().map(|l| self.bank.concept(l.gesture)).collect();
        Ok(vec![stack(g, paths)?, stack(g, gestures)?])
    }

    /// Total loss of one batch under the configured variant.
    pub fn loss(&self, g: &mut Graph<F>, store: &ParameterStore<F>, batch: &Batch<F>) -> Result<LossVars> {
        let v = &self.config.variant;
        let b = batch.labels.len();
        let mut ortho = None;
        let mut sc = None;
        let ctx = match v.variant {
            Variant::Exp => {
                let mut set = Vec::with_capacity(v.k);
                for slot in 0..v.k {
                    let rows = batch
                        .labels
                        .iter()
                        .zip(&batch.holistic)
                        .map(|(l, &h)| match (h, slot) {
                            (true, _) => self.bank.holistic(*l),
                            (false, 0) => self.bank.concept(l.path),
                            (false, _) => self.bank.concept(l.gesture),
                        })
                        .collect();
                    set.push(stack(g, rows)?);
                }
                set
            }
            Variant::Oss | Variant::Sc => {
                let hol = stack(g, batch.labels.iter().map(|l| self.bank.holistic(*l)).collect())?;
                let set = self.project(g, store, hol)?;
                ortho = Some(text::ortho_loss(g, &set, b)?);
                if v.variant == Variant::Sc {
                    sc = Some(self.sc_loss(g, &set, &batch.labels)?);
                }
                set
            }
        };
        let z = g.constant(batch.z_t.clone())?;
        let pred = self.denoiser.compose_eps(g, store, z, &batch.t, &ctx, v.mode, v.aggregation)?;
        let target = g.constant(batch.eps.clone())?;
        let mse = g.mse(pred, target)?;
        let mut total = mse;
        if let Some(o) = ortho {
            let w = g.scale(o.loss, F::from_f64_lossy(v.alpha_o))?;
            total = g.add(total, w)?;
        }
        if let Some(s) = sc {
            let w = g.scale(s, F::from_f64_lossy(v.alpha_sc))?;
            total = g.add(total, w)?;
        }
        Ok(LossVars { total, mse, ortho, sc })
    }

    /// Smooth-L1 (beta 1) between C^P and the projected set, averaged over slots.
    pub fn sc_loss(&self, g: &mut Graph<F>, set: &[Var], labels: &[HolisticLabel]) -> Result<Var> {
        let cp = self.cp(g, labels)?;
        let a = g.concat(&cp, 0)?;
        let b = g.concat(set, 0)?;
        Ok(g.smooth_l1(b, a, F::one())?)
    }

    /// L_SC of the current projection on `labels`, outside training.
    pub fn sc_loss_value(&self, labels: &[HolisticLabel]) -> Result<f64> {
        if self.config.variant.variant != Variant::Sc {
            return Err(DiffusionError::Config("L_SC is only defined for the sc variant".into()));
        }
        let mut g = Graph::new();
        let hol = stack(&mut g, labels.iter().map(|l| self.bank.holistic(*l)).collect())?;
        let set = self.project(&mut g, &self.store, hol)?;
        let l = self.sc_loss(&mut g, &set, labels)?;
        Ok(g.value(l).item().to_f64_lossy())
    }

    fn projected(&self, label: HolisticLabel) -> Result<Vec<Tensor<F>>> {
        let mut g = Graph::new();
        let hol = g.constant(self.bank.holistic(label).clone())?;
        let set = self.project(&mut g, &self.store, hol)?;
        Ok(set.into_iter().map(|v| g.value(v).clone()).collect())
    }

    /// Condition set for generating the whole labelled motion. Exp repeats
    /// the holistic text K times.
    pub fn holistic_condition(&self, label: HolisticLabel) -> Result<Vec<Tensor<F>>> {
        match self.config.variant.variant {
            Variant::Exp => Ok(vec![self.bank.holistic(label).clone(); self.config.variant.k]),
            _ => self.projected(label),
        }
    }

    /// Per-concept conditions recovered from a holistic label.
    pub fn decomposed_condition(&self, label: HolisticLabel) -> Result<Vec<Tensor<F>>> {
        match self.config.variant.variant {
            Variant::Exp => Ok(vec![self.bank.concept(label.path).clone(), self.bank.concept(label.gesture).clone()]),
            _ => self.projected(label),
        }
    }

    /// Embedding standing for a single concept. OSS and SC have no
    /// single-concept text pathway, so the concept is cut out of the
    /// projected set of a holistic text pairing it with the rest concept of
    /// the other family, assuming slot order (path, gesture).
    pub fn concept_condition(&self, c: Concept) -> Result<Tensor<F>> {
        match self.config.variant.variant {
            Variant::Exp => Ok(self.bank.concept(c).clone()),
            _ => {
                let (label, slot) = match c.family() {
                    crate::data::Family::Path => (HolisticLabel::new(c, Concept::Idle)?, 0),
                    crate::data::Family::Gesture => (HolisticLabel::new(Concept::Stop, c)?, 1),
                };
                let mut set = self.projected(label)?;
                let slot = slot.min(set.len() - 1);
                Ok(set.swap_remove(slot))
            }
        }
    }

    /// Composed noise prediction for `b` latents `[b, 16, 16]` under a
    /// per-sample condition set. Every set has the same size.
    pub fn predict(&self, z_t: &Tensor<F>, t: &[usize], conds: &[Vec<Tensor<F>>]) -> Result<Tensor<F>> {
        let k = conds.first().map(|c| c.len()).unwrap_or(0);
        if k == 0 || conds.iter().any(|c| c.len() != k) {
            return Err(DiffusionError::Shape("every chain needs a non-empty condition set of equal size".into()));
        }
        let mut g = Graph::new();
        let ctx = (0..k)
            .map(|slot| stack(&mut g, conds.iter().map(|c| &c[slot]).collect()))
            .collect::<Result<Vec<_>>>()?;
        let z = g.constant(z_t.clone())?;
        let v = &self.config.variant;
        let e = self.denoiser.compose_eps(&mut g, &self.store, z, t, &ctx, v.mode, v.aggregation)?;
        Ok(g.value(e).clone())
    }
}

impl DiffusionModel<f32> {
    pub fn config_path(ckpt: &Path) -> PathBuf {
        ckpt.with_extension("toml")
    }

    /// Weights to `path`, config to the sibling `.toml`.
    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(&self.store, path)?;
        std::fs::write(Self::config_path(path), self.config.to_toml())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let store = checkpoint::load(path)?;
        let config = TrainConfig::load(&Self::config_path(path), &TrainConfig::default())?;
        Self::from_store(config, store)
    }
}
