//! Distribution and retrieval metrics over feature vectors.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{EvalError, Result};
use crate::data::MotionSequence;

/// Eigenvalues below this are a hard error; those in `[-PSD_TOL, 0)` are clamped.
pub const PSD_TOL: f64 = 1e-6;
pub const DIVERSITY_PAIRS: usize = 300;
pub const MMODALITY_REPEATS: usize = 10;
pub const R_PRECISION_POOL: usize = 32;

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn check_dim(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<usize> {
    let d = a.first().map(Vec::len).unwrap_or(0);
    if a.iter().chain(b).any(|v| v.len() != d) || d == 0 {
        return Err(EvalError::Dimension(format!(
            "features must share one non-zero dimension, got {:?} and {:?}",
            a.first().map(Vec::len),
            b.first().map(Vec::len)
        )));
    }
    Ok(d)
}

fn too_few(metric: &'static str, need: usize, got: usize) -> Result<()> {
    if got < need {
        return Err(EvalError::TooFew { metric, need, got });
    }
    Ok(())
}

fn moments(x: &[Vec<f64>], d: usize) -> (DVector<f64>, DMatrix<f64>) {
    let n = x.len() as f64;
    let mut mu = DVector::zeros(d);
    for v in x {
        mu += DVector::from_column_slice(v);
    }
    mu /= n;
    let mut cov = DMatrix::zeros(d, d);
    for v in x {
        let c = DVector::from_column_slice(v) - &mu;
        cov += &c * c.transpose();
    }
    (mu, cov / (n - 1.0))
}

/// Eigenvalues of a symmetric matrix, clamped at 0 within tolerance.
fn psd_eigen(m: DMatrix<f64>, what: &str) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    let sym = (&m + m.transpose()) * 0.5;
    let mut e = SymmetricEigen::new(sym);
    for l in e.eigenvalues.iter_mut() {
        if *l < -PSD_TOL {
            return Err(EvalError::NotPsd(format!("{what} has eigenvalue {l:e}")));
        }
        *l = l.max(0.0);
    }
    Ok(e)
}

/// Frechet distance between Gaussians fitted to two feature sets:
/// `|mu_g - mu_r|^2 + Tr(S_g + S_r - 2 (S_g S_r)^(1/2))`. The trace of the
/// root is taken on the symmetric similar matrix `S_r^(1/2) S_g S_r^(1/2)`.
pub fn fid(real: &[Vec<f64>], generated: &[Vec<f64>]) -> Result<f64> {
    let d = check_dim(real, generated)?;
    too_few("fid", 2, real.len().min(generated.len()))?;
    let (mu_r, s_r) = moments(real, d);
    let (mu_g, s_g) = moments(generated, d);
    let e = psd_eigen(s_r.clone(), "real covariance")?;
    let root_r = &e.eigenvectors * DMatrix::from_diagonal(&e.eigenvalues.map(f64::sqrt)) * e.eigenvectors.transpose();
    let inner = psd_eigen(&root_r * &s_g * &root_r, "covariance product")?;
    let tr_root: f64 = inner.eigenvalues.iter().map(|l| l.sqrt()).sum();
    let diff = (mu_g - mu_r).norm_squared();
    Ok((diff + s_g.trace() + s_r.trace() - 2.0 * tr_root).max(0.0))
}

/// Top-1/2/3 retrieval accuracy of each motion's own text among `pool - 1`
/// mismatched texts. Mismatches are other items whose label differs from
/// the query's; labels may repeat within a pool. A mismatch outranks the
/// ground truth only when strictly closer.
pub fn r_precision(motion: &[Vec<f64>], text: &[Vec<f64>], labels: &[usize], pool: usize, seed: u64) -> Result<[f64; 3]> {
    check_dim(motion, text)?;
    if motion.len() != text.len() || labels.len() != motion.len() {
        return Err(EvalError::Dimension(format!(
            "{} motions, {} texts, {} labels",
            motion.len(),
            text.len(),
            labels.len()
        )));
    }
    too_few("r_precision pool", 2, pool)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = [0usize; 3];
    for i in 0..motion.len() {
        let candidates: Vec<usize> = (0..motion.len()).filter(|&j| labels[j] != labels[i]).collect();
        if candidates.len() < pool - 1 {
            return Err(EvalError::TooFew {
                metric: "r_precision mismatches",
                need: pool - 1,
                got: candidates.len(),
            });
        }
        let gt = dist(&motion[i], &text[i]);
        let closer = candidates
            .choose_multiple(&mut rng, pool - 1)
            .filter(|&&j| dist(&motion[i], &text[j]) < gt)
            .count();
        for (k, h) in hits.iter_mut().enumerate() {
            if closer <= k {
                *h += 1;
            }
        }
    }
    let n = motion.len() as f64;
    Ok(hits.map(|h| h as f64 / n))
}

/// Mean distance between each motion feature and its paired text feature.
pub fn mm_dist(motion: &[Vec<f64>], text: &[Vec<f64>]) -> Result<f64> {
    check_dim(motion, text)?;
    if motion.len() != text.len() {
        return Err(EvalError::Dimension(format!("{} motions, {} texts", motion.len(), text.len())));
    }
    too_few("mm_dist", 1, motion.len())?;
    Ok(motion.iter().zip(text).map(|(m, t)| dist(m, t)).sum::<f64>() / motion.len() as f64)
}

/// Mean distance over `pairs` pairs drawn from two disjoint random index sets.
pub fn diversity(features: &[Vec<f64>], pairs: usize, seed: u64) -> Result<f64> {
    check_dim(features, &[])?;
    too_few("diversity", 2 * pairs, features.len())?;
    let mut idx: Vec<usize> = (0..features.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (a, b) = idx[..2 * pairs].split_at(pairs);
    Ok(a.iter().zip(b).map(|(&i, &j)| dist(&features[i], &features[j])).sum::<f64>() / pairs as f64)
}

/// Per text, split its generations into two random halves, pair them
/// elementwise and average the distances; then average over texts.
pub fn mmodality(groups: &[Vec<Vec<f64>>], seed: u64) -> Result<f64> {
    too_few("mmodality texts", 1, groups.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for g in groups {
        check_dim(g, &[])?;
        too_few("mmodality repeats", MMODALITY_REPEATS, g.len())?;
        let mut idx: Vec<usize> = (0..g.len()).collect();
        idx.shuffle(&mut rng);
        let half = g.len() / 2;
        let (a, b) = idx[..2 * half].split_at(half);
        total += a.iter().zip(b).map(|(&i, &j)| dist(&g[i], &g[j])).sum::<f64>() / half as f64;
    }
    Ok(total / groups.len() as f64)
}

/// Mean distance between consecutive raw frames, over frames and motions.
pub fn transition_distance(motions: &[MotionSequence]) -> Result<f64> {
    too_few("transition_distance", 1, motions.len())?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for m in motions {
        too_few("transition_distance frames", 2, m.len())?;
        for t in 1..m.len() {
            sum += dist(m.frame(t), m.frame(t - 1));
            count += 1;
        }
    }
    Ok(sum / count as f64)
}

/// Deterministic standard-normal features, for baselines and tests.
pub fn gaussian_features(n: usize, mean: &[f64], std: f64, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    use rand_distr::{Distribution, StandardNormal};
    (0..n)
        .map(|_| {
            mean.iter()
                .map(|m| {
                    let z: f64 = StandardNormal.sample(rng);
                    m + std * z
                })
                .collect()
        })
        .collect()
}
