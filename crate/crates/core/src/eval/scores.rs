//! Oracle scoring of decomposed and recombined generations.

use serde::{Deserialize, Serialize};

use super::Result;
use crate::data::oracle::{gesture_features, limbs_at_rest, oracle_classify, path_features};
use crate::data::{HolisticLabel, MotionSequence};
use crate::diffusion::{sample_latents, DiffusionModel, NoiseSchedule};
use crate::tensor::Tensor;
use crate::vae::LatentCodec;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FamilyAccuracy {
    pub path: f64,
    pub gesture: f64,
    pub joint: f64,
    pub count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecompositionScores {
    /// Path chains scored on their path label, gesture chains on their
    /// gesture label; joint needs both chains of a seed right.
    pub decomposition: FamilyAccuracy,
    /// Fraction of path-chain outputs whose limb channels are at rest.
    pub path_rest_fraction: f64,
    /// Mean |limb channel| of path-chain outputs.
    pub path_limb_energy: f64,
    /// Mean root spread of gesture-chain outputs.
    pub gesture_root_spread: f64,
    /// Holistic samples on recombined concept pairs, scored on both labels.
    pub recombination: FamilyAccuracy,
}

fn ratio(k: usize, n: usize) -> f64 {
    k as f64 / n.max(1) as f64
}

/// Both labels of each output against its target.
pub fn score_holistic(targets: &[HolisticLabel], outputs: &[MotionSequence]) -> FamilyAccuracy {
    let (mut p, mut g, mut j) = (0, 0, 0);
    for (t, o) in targets.iter().zip(outputs) {
        let got = oracle_classify(o);
        p += usize::from(got.path == t.path);
        g += usize::from(got.gesture == t.gesture);
        j += usize::from(got == *t);
    }
    let n = targets.len().min(outputs.len());
    FamilyAccuracy {
        path: ratio(p, n),
        gesture: ratio(g, n),
        joint: ratio(j, n),
        count: n,
    }
}

/// Path outputs on the path label, gesture outputs on the gesture label.
pub fn score_decomposition(
    targets: &[HolisticLabel],
    path_out: &[MotionSequence],
    gesture_out: &[MotionSequence],
) -> (FamilyAccuracy, f64, f64, f64) {
    let n = targets.len().min(path_out.len()).min(gesture_out.len());
    let (mut p, mut g, mut j, mut rest) = (0, 0, 0, 0);
    let (mut limb, mut spread) = (0.0, 0.0);
    for i in 0..n {
        let ph = oracle_classify(&path_out[i]).path == targets[i].path;
        let gh = oracle_classify(&gesture_out[i]).gesture == targets[i].gesture;
        p += usize::from(ph);
        g += usize::from(gh);
        j += usize::from(ph && gh);
        rest += usize::from(limbs_at_rest(&path_out[i]));
        limb += gesture_features(&path_out[i]).limb_mean_abs;
        spread += path_features(&gesture_out[i]).spread;
    }
    let acc = FamilyAccuracy {
        path: ratio(p, n),
        gesture: ratio(g, n),
        joint: ratio(j, n),
        count: n,
    };
    (acc, ratio(rest, n), limb / n.max(1) as f64, spread / n.max(1) as f64)
}

/// Decompose `n_seeds` labels cycling through `labels` into one chain per
/// concept, and recombine the concepts of each held-out pair `n_seeds` times.
#[allow(clippy::too_many_arguments)]
pub fn decomposition_scores(
    model: &DiffusionModel<f32>,
    codec: &LatentCodec,
    schedule: &NoiseSchedule,
    labels: &[HolisticLabel],
    held_out: &[HolisticLabel],
    n_seeds: usize,
    steps: usize,
    seed: u64,
) -> Result<DecompositionScores> {
    let base = seed << 32;
    let targets: Vec<HolisticLabel> = labels.iter().copied().cycle().take(n_seeds).collect();
    let mut conds = Vec::with_capacity(2 * n_seeds);
    let mut seeds = Vec::with_capacity(2 * n_seeds);
    for (i, l) in targets.iter().enumerate() {
        let c = model.decomposed_condition(*l)?;
        for (k, ck) in c.into_iter().enumerate().take(2) {
            conds.push(vec![ck]);
            seeds.push(base + (2 * i + k) as u64);
        }
    }
    let z = sample_latents(model, schedule, &conds, &seeds, steps)?;
    let out = codec.decode(&z)?;
    let path_out: Vec<MotionSequence> = out.iter().step_by(2).cloned().collect();
    let gesture_out: Vec<MotionSequence> = out.iter().skip(1).step_by(2).cloned().collect();
    let (decomposition, path_rest_fraction, path_limb_energy, gesture_root_spread) =
        score_decomposition(&targets, &path_out, &gesture_out);

    let mut rconds: Vec<Vec<Tensor<f32>>> = Vec::new();
    let mut rseeds = Vec::new();
    let mut rtargets = Vec::new();
    for (h, pair) in held_out.iter().enumerate() {
        let c = vec![model.concept_condition(pair.path)?, model.concept_condition(pair.gesture)?];
        for i in 0..n_seeds {
            rconds.push(c.clone());
            rseeds.push(base + (1 << 24) + (h * n_seeds + i) as u64);
            rtargets.push(*pair);
        }
    }
    let recombination = if rtargets.is_empty() {
        FamilyAccuracy {
            path: 0.0,
            gesture: 0.0,
            joint: 0.0,
            count: 0,
        }
    } else {
        let z = sample_latents(model, schedule, &rconds, &rseeds, steps)?;
        score_holistic(&rtargets, &codec.decode(&z)?)
    };
    Ok(DecompositionScores {
        decomposition,
        path_rest_fraction,
        path_limb_energy,
        gesture_root_spread,
        recombination,
    })
}
