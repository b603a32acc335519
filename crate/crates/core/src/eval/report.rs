//! Full evaluation of one trained model into a [`MetricReport`].

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::evaluator::EvaluatorModel;
use super::metrics::{self, DIVERSITY_PAIRS, MMODALITY_REPEATS, R_PRECISION_POOL};
use super::scores::{decomposition_scores, score_holistic, DecompositionScores, FamilyAccuracy};
use super::{EvalError, Result};
use crate::data::{Dataset, HolisticLabel, MotionSequence, Split};
use crate::diffusion::{sample_latents, DiffusionModel, NoiseSchedule, SAMPLE_STEPS};
use crate::vae::LatentCodec;

// Disjoint seed ranges per sampling job, under `seed << 32`.
const GEN_OFFSET: u64 = 1 << 25;
const MM_OFFSET: u64 = 1 << 26;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Holistic samples over test-split labels; diversity needs 600.
    pub n_generated: usize,
    /// Distinct test labels used for MModality.
    pub mm_texts: usize,
    pub mm_repeats: usize,
    /// Seeds for decomposition and per held-out pair for recombination.
    pub decomposition_seeds: usize,
    pub steps: usize,
    pub pool: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_generated: 2 * DIVERSITY_PAIRS,
            mm_texts: 8,
            mm_repeats: MMODALITY_REPEATS,
            decomposition_seeds: 100,
            steps: SAMPLE_STEPS,
            pool: R_PRECISION_POOL,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measured {
    pub value: f64,
    pub count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalScores {
    pub top1: f64,
    pub top2: f64,
    pub top3: f64,
    pub count: usize,
}

/// Metrics of the real test split under the same evaluator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RealReference {
    pub r_precision: RetrievalScores,
    pub mm_dist: Measured,
    /// Absent when the test split is below the diversity minimum.
    pub diversity: Option<Measured>,
    pub transition_distance: Measured,
    pub holistic_accuracy: FamilyAccuracy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub variant: String,
    pub mode: String,
    pub steps: usize,
    pub seed: u64,
    pub fid: Measured,
    pub r_precision: RetrievalScores,
    pub mm_dist: Measured,
    pub diversity: Measured,
    pub mmodality: Measured,
    pub transition_distance: Measured,
    /// Oracle labels of the holistic samples against their conditions.
    pub holistic_accuracy: FamilyAccuracy,
    pub decomposition_accuracy: FamilyAccuracy,
    pub recombination_accuracy: FamilyAccuracy,
    pub path_rest_fraction: f64,
    pub path_limb_energy: f64,
    pub gesture_root_spread: f64,
    pub real: RealReference,
}

fn retrieval(ev: &EvaluatorModel, motions: &[MotionSequence], labels: &[HolisticLabel], pool: usize, seed: u64) -> Result<(RetrievalScores, Measured)> {
    let m = ev.motion_features(motions)?;
    let t = ev.text_features(labels)?;
    let idx: Vec<usize> = labels.iter().map(|l| l.index()).collect();
    let [top1, top2, top3] = metrics::r_precision(&m, &t, &idx, pool, seed)?;
    let rp = RetrievalScores {
        top1,
        top2,
        top3,
        count: m.len(),
    };
    Ok((rp, Measured { value: metrics::mm_dist(&m, &t)?, count: m.len() }))
}

impl MetricReport {
    pub fn is_finite(&self) -> bool {
        let r = &self.real;
        [
            self.fid.value,
            self.r_precision.top1,
            self.r_precision.top2,
            self.r_precision.top3,
            self.mm_dist.value,
            self.diversity.value,
            self.mmodality.value,
            self.transition_distance.value,
            self.path_limb_energy,
            self.gesture_root_spread,
            r.mm_dist.value,
            r.diversity.map_or(0.0, |d| d.value),
            r.transition_distance.value,
        ]
        .iter()
        .all(|v| v.is_finite())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serialises");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| EvalError::Dimension(format!("bad report: {e}")))
    }

    /// Aligned `metric  generated  real  n` table.
    pub fn to_table(&self) -> String {
        let f = |v: f64| format!("{v:.4}");
        let acc = |a: &FamilyAccuracy| format!("{:.3}/{:.3}/{:.3}", a.path, a.gesture, a.joint);
        let r = &self.real;
        let rows: Vec<[String; 4]> = vec![
            ["fid".into(), f(self.fid.value), "-".into(), self.fid.count.to_string()],
            ["r_precision@1".into(), f(self.r_precision.top1), f(r.r_precision.top1), self.r_precision.count.to_string()],
            ["r_precision@2".into(), f(self.r_precision.top2), f(r.r_precision.top2), self.r_precision.count.to_string()],
            ["r_precision@3".into(), f(self.r_precision.top3), f(r.r_precision.top3), self.r_precision.count.to_string()],
            ["mm_dist".into(), f(self.mm_dist.value), f(r.mm_dist.value), self.mm_dist.count.to_string()],
            [
                "diversity".into(),
                f(self.diversity.value),
                r.diversity.map_or("-".into(), |d| f(d.value)),
                self.diversity.count.to_string(),
            ],
            ["mmodality".into(), f(self.mmodality.value), "-".into(), self.mmodality.count.to_string()],
            [
                "transition_distance".into(),
                f(self.transition_distance.value),
                f(r.transition_distance.value),
                self.transition_distance.count.to_string(),
            ],
            [
                "holistic_acc p/g/joint".into(),
                acc(&self.holistic_accuracy),
                acc(&r.holistic_accuracy),
                self.holistic_accuracy.count.to_string(),
            ],
            [
                "decomposition_acc p/g/joint".into(),
                acc(&self.decomposition_accuracy),
                "-".into(),
                self.decomposition_accuracy.count.to_string(),
            ],
            [
                "recombination_acc p/g/joint".into(),
                acc(&self.recombination_accuracy),
                "-".into(),
                self.recombination_accuracy.count.to_string(),
            ],
            [
                "path_rest_fraction".into(),
                f(self.path_rest_fraction),
                "-".into(),
                self.decomposition_accuracy.count.to_string(),
            ],
            [
                "path_limb_energy".into(),
                f(self.path_limb_energy),
                "-".into(),
                self.decomposition_accuracy.count.to_string(),
            ],
            [
                "gesture_root_spread".into(),
                f(self.gesture_root_spread),
                "-".into(),
                self.decomposition_accuracy.count.to_string(),
            ],
        ];
        let header = ["metric".to_string(), "generated".into(), "real".into(), "n".into()];
        let mut w = [0usize; 4];
        for row in std::iter::once(&header).chain(&rows) {
            for (i, c) in row.iter().enumerate() {
                w[i] = w[i].max(c.len());
            }
        }
        let mut out = format!("variant {} ({}), {} steps, seed {}\n", self.variant, self.mode, self.steps, self.seed);
        for row in std::iter::once(&header).chain(&rows) {
            let _ = writeln!(out, "{:<a$}  {:>b$}  {:>c$}  {:>d$}", row[0], row[1], row[2], row[3], a = w[0], b = w[1], c = w[2], d = w[3]);
        }
        out
    }
}

/// Samples the model and scores it against the test split.
pub fn evaluate(
    model: &DiffusionModel<f32>,
    codec: &LatentCodec,
    ev: &EvaluatorModel,
    data: &Dataset,
    schedule: &NoiseSchedule,
    cfg: &EvalConfig,
) -> Result<MetricReport> {
    let test: Vec<_> = data.split(Split::Test).collect();
    if test.is_empty() {
        return Err(EvalError::TooFew { metric: "test split", need: 1, got: 0 });
    }
    let base = cfg.seed << 32;
    let labels: Vec<HolisticLabel> = test.iter().map(|s| s.label).cycle().take(cfg.n_generated).collect();

    let conds = labels.iter().map(|l| model.holistic_condition(*l)).collect::<std::result::Result<Vec<_>, _>>()?;
    let seeds: Vec<u64> = (0..labels.len() as u64).map(|i| base + GEN_OFFSET + i).collect();
    let z = sample_latents(model, schedule, &conds, &seeds, cfg.steps)?;
    let generated = codec.decode(&z)?;

    let real_motions: Vec<MotionSequence> = test.iter().map(|s| s.motion.clone()).collect();
    let real_labels: Vec<HolisticLabel> = test.iter().map(|s| s.label).collect();
    let real_feats = ev.motion_features(&real_motions)?;
    let gen_feats = ev.motion_features(&generated)?;

    let (r_precision, mm_dist) = retrieval(ev, &generated, &labels, cfg.pool, cfg.seed)?;
    let (real_rp, real_mm) = retrieval(ev, &real_motions, &real_labels, cfg.pool, cfg.seed)?;

    let mut mm_labels: Vec<HolisticLabel> = Vec::new();
    for l in &real_labels {
        if mm_labels.len() == cfg.mm_texts {
            break;
        }
        if !mm_labels.contains(l) {
            mm_labels.push(*l);
        }
    }
    let mut mm_conds = Vec::new();
    let mut mm_seeds = Vec::new();
    for (j, l) in mm_labels.iter().enumerate() {
        let c = model.holistic_condition(*l)?;
        for r in 0..cfg.mm_repeats {
            mm_conds.push(c.clone());
            mm_seeds.push(base + MM_OFFSET + (j * cfg.mm_repeats + r) as u64);
        }
    }
    let mm_z = sample_latents(model, schedule, &mm_conds, &mm_seeds, cfg.steps)?;
    let mm_feats = ev.motion_features(&codec.decode(&mm_z)?)?;
    let groups: Vec<Vec<Vec<f64>>> = mm_feats.chunks(cfg.mm_repeats.max(1)).map(|c| c.to_vec()).collect();

    let held_out = data.manifest.held_out_pairs.clone();
    let d: DecompositionScores = decomposition_scores(
        model,
        codec,
        schedule,
        &real_labels,
        &held_out,
        cfg.decomposition_seeds,
        cfg.steps,
        cfg.seed,
    )?;

    let v = &model.config.variant;
    Ok(MetricReport {
        variant: v.variant.to_string(),
        mode: v.mode.to_string(),
        steps: cfg.steps,
        seed: cfg.seed,
        fid: Measured {
            value: metrics::fid(&real_feats, &gen_feats)?,
            count: gen_feats.len(),
        },
        r_precision,
        mm_dist,
        diversity: Measured {
            value: metrics::diversity(&gen_feats, DIVERSITY_PAIRS, cfg.seed)?,
            count: gen_feats.len(),
        },
        mmodality: Measured {
            value: metrics::mmodality(&groups, cfg.seed)?,
            count: mm_feats.len(),
        },
        transition_distance: Measured {
            value: metrics::transition_distance(&generated)?,
            count: generated.len(),
        },
        holistic_accuracy: score_holistic(&labels, &generated),
        decomposition_accuracy: d.decomposition,
        recombination_accuracy: d.recombination,
        path_rest_fraction: d.path_rest_fraction,
        path_limb_energy: d.path_limb_energy,
        gesture_root_spread: d.gesture_root_spread,
        real: RealReference {
            r_precision: real_rp,
            mm_dist: real_mm,
            diversity: if real_feats.len() >= 2 * DIVERSITY_PAIRS {
                Some(Measured {
                    value: metrics::diversity(&real_feats, DIVERSITY_PAIRS, cfg.seed)?,
                    count: real_feats.len(),
                })
            } else {
                None
            },
            transition_distance: Measured {
                value: metrics::transition_distance(&real_motions)?,
                count: real_motions.len(),
            },
            holistic_accuracy: score_holistic(&real_labels, &real_motions),
        },
    })
}
