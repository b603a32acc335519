//! Linear-beta DDPM schedule and its respacing for short samplers.

use super::{DiffusionError, Result};

pub const DEFAULT_T: usize = 1000;
pub const BETA_START: f64 = 1e-4;
pub const BETA_END: f64 = 0.02;
pub const SAMPLE_STEPS: usize = 50;

/// Tables indexed by `t - 1` for `t` in `1..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub alpha_bar: Vec<f64>,
    /// Posterior variance; the first entry is `beta_1`.
    pub beta_tilde: Vec<f64>,
    pub eta: Vec<f64>,
}

/// Coefficients of one reverse step of a respaced chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReverseStep {
    pub t: usize,
    pub alpha: f64,
    pub alpha_bar: f64,
    pub beta_tilde: f64,
    pub eta: f64,
}

pub fn make_schedule(t_max: usize, beta_1: f64, beta_t: f64) -> Result<NoiseSchedule> {
    if t_max < 2 || !(beta_1 > 0.0 && beta_1 <= beta_t && beta_t < 1.0) {
        return Err(DiffusionError::Schedule(format!(
            "need T >= 2 and 0 < beta_1 <= beta_T < 1, got T={t_max}, beta_1={beta_1}, beta_T={beta_t}"
        )));
    }
    let beta: Vec<f64> = (0..t_max)
        .map(|i| beta_1 + (beta_t - beta_1) * i as f64 / (t_max - 1) as f64)
        .collect();
    let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bar = Vec::with_capacity(t_max);
    let mut acc = 1.0;
    for a in &alpha {
        acc *= a;
        alpha_bar.push(acc);
    }
    let beta_tilde = (0..t_max)
        .map(|i| {
            if i == 0 {
                beta[0]
            } else {
                beta[i] * (1.0 - alpha_bar[i - 1]) / (1.0 - alpha_bar[i])
            }
        })
        .collect();
    let eta = (0..t_max).map(|i| (1.0 - alpha[i]) / (1.0 - alpha_bar[i]).sqrt()).collect();
    Ok(NoiseSchedule {
        beta,
        alpha,
        alpha_bar,
        beta_tilde,
        eta,
    })
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        make_schedule(DEFAULT_T, BETA_START, BETA_END).expect("valid default schedule")
    }
}

impl NoiseSchedule {
    pub fn len(&self) -> usize {
        self.beta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beta.is_empty()
    }

    pub fn alpha_bar_at(&self, t: usize) -> f64 {
        self.alpha_bar[t - 1]
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.len() {
            return Err(DiffusionError::Timestep { t, max: self.len() });
        }
        Ok(())
    }

    /// `sqrt(abar_t) z0 + sqrt(1 - abar_t) eps`.
    pub fn q_sample(&self, z0: &[f32], t: usize, eps: &[f32]) -> Result<Vec<f32>> {
        self.check_t(t)?;
        if z0.len() != eps.len() {
            return Err(DiffusionError::Shape(format!("q_sample: z0 has {} values, eps {}", z0.len(), eps.len())));
        }
        let ab = self.alpha_bar_at(t);
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        Ok(z0.iter().zip(eps).map(|(&z, &e)| (a * z as f64 + b * e as f64) as f32).collect())
    }

    /// Reverse steps for a `steps`-long chain on the uniform stride
    /// `t_i = i * T / steps`, ordered from `t = T` down. Each step's
    /// coefficients are re-derived from the cumulative products of the kept
    /// timesteps, so `steps == T` reproduces the full schedule.
    pub fn respace(&self, steps: usize) -> Result<Vec<ReverseStep>> {
        let t_max = self.len();
        if steps == 0 || steps > t_max {
            return Err(DiffusionError::Steps { steps, max: t_max });
        }
        let ts: Vec<usize> = (1..=steps).map(|i| i * t_max / steps).collect();
        let mut out = Vec::with_capacity(steps);
        let mut prev_bar = 1.0;
        for &t in &ts {
            let ab = self.alpha_bar_at(t);
            let alpha = ab / prev_bar;
            let beta = 1.0 - alpha;
            let beta_tilde = if prev_bar == 1.0 { beta } else { beta * (1.0 - prev_bar) / (1.0 - ab) };
            out.push(ReverseStep {
                t,
                alpha,
                alpha_bar: ab,
                beta_tilde,
                eta: beta / (1.0 - ab).sqrt(),
            });
            prev_bar = ab;
        }
        out.reverse();
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn first_alpha_bar_is_one_minus_beta() {
        let s = NoiseSchedule::default();
        assert_eq!(s.alpha_bar[0], 1.0 - 1e-4);
        assert!(s.alpha_bar[999] < s.alpha_bar[0]);
        assert_eq!(s.beta_tilde[0], s.beta[0]);
        assert!((s.beta[999] - 0.02).abs() < 1e-15);
    }

    #[test]
    fn invariants_hold() {
        for (t, b1, bt) in [(1000, 1e-4, 0.02), (2, 0.1, 0.1), (50, 1e-3, 0.5)] {
            let s = make_schedule(t, b1, bt).unwrap();
            for i in 0..t {
                assert!(s.beta[i] > 0.0 && s.beta[i] < 1.0);
                assert!(s.eta[i] > 0.0);
                assert!(s.beta_tilde[i] > 0.0 && s.beta_tilde[i] <= s.beta[i]);
                if i > 0 {
                    assert!(s.alpha_bar[i] < s.alpha_bar[i - 1]);
                }
            }
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        for (t, b1, bt) in [(1, 1e-4, 0.02), (10, 0.0, 0.02), (10, 0.03, 0.02), (10, 1e-4, 1.0)] {
            assert!(matches!(make_schedule(t, b1, bt), Err(DiffusionError::Schedule(_))));
        }
    }

    /// Product in compensated (double-double) arithmetic.
    fn alpha_bar_oracle(t: usize, b1: f64, bt: f64) -> f64 {
        let (mut hi, mut lo) = (1.0f64, 0.0f64);
        for i in 0..t {
            // beta_i = b1 + (bt - b1) * i / (t - 1), evaluated with a rounding-free numerator
            let a = 1.0 - (b1 * (t - 1) as f64 + (bt - b1) * i as f64) / (t - 1) as f64;
            let p = hi * a;
            let err = hi.mul_add(a, -p);
            let l = lo * a + err;
            hi = p + l;
            lo = l - (hi - p);
        }
        hi + lo
    }

    #[test]
    fn final_alpha_bar_matches_compensated_product() {
        let s = NoiseSchedule::default();
        let want = alpha_bar_oracle(1000, 1e-4, 0.02);
        let got = s.alpha_bar[999];
        assert!(((got - want) / want).abs() < 1e-9, "{got} vs {want}");
    }

    #[test]
    fn q_sample_edge_cases() {
        let s = NoiseSchedule::default();
        let z0 = [1.0f32, -2.0, 0.5];
        let zero = [0.0f32; 3];
        let eps = [0.3f32, 0.7, -1.1];
        for t in [1, 500, 1000] {
            let ab = s.alpha_bar_at(t);
            let a = s.q_sample(&z0, t, &zero).unwrap();
            let b = s.q_sample(&zero, t, &eps).unwrap();
            for i in 0..3 {
                assert_eq!(a[i], (ab.sqrt() * z0[i] as f64) as f32);
                assert_eq!(b[i], ((1.0 - ab).sqrt() * eps[i] as f64) as f32);
            }
        }
        assert!(matches!(s.q_sample(&z0, 0, &eps), Err(DiffusionError::Timestep { .. })));
        assert!(matches!(s.q_sample(&z0, 1001, &eps), Err(DiffusionError::Timestep { .. })));
        assert!(matches!(s.q_sample(&z0, 3, &eps[..2]), Err(DiffusionError::Shape(_))));
    }

    #[test]
    fn q_sample_variance_within_three_standard_errors() {
        let s = NoiseSchedule::default();
        let n = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for t in [10, 300, 1000] {
            let eps: Vec<f32> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
            let z = s.q_sample(&vec![0.8f32; n], t, &eps).unwrap();
            let mean = z.iter().map(|&v| v as f64).sum::<f64>() / n as f64;
            let var = z.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let want = 1.0 - s.alpha_bar_at(t);
            // standard error of the sample variance of a Gaussian
            let se = want * (2.0 / (n - 1) as f64).sqrt();
            assert!((var - want).abs() < 3.0 * se, "t={t}: {var} vs {want}");
        }
    }

    #[test]
    fn respacing() {
        let s = NoiseSchedule::default();
        let steps = s.respace(50).unwrap();
        assert_eq!(steps.len(), 50);
        assert_eq!(steps[0].t, 1000);
        assert_eq!(steps[49].t, 20);
        for w in steps.windows(2) {
            let ratio = w[0].alpha_bar / w[1].alpha_bar;
            assert!((w[0].alpha - ratio).abs() < 1e-12);
        }
        // steps == T reproduces the base tables
        let full = s.respace(1000).unwrap();
        for st in &full {
            let i = st.t - 1;
            assert!((st.alpha - s.alpha[i]).abs() < 1e-12);
            assert!((st.beta_tilde - s.beta_tilde[i]).abs() < 1e-12);
            assert!((st.eta - s.eta[i]).abs() < 1e-12);
        }
        assert!(matches!(s.respace(1001), Err(DiffusionError::Steps { .. })));
        assert!(matches!(s.respace(0), Err(DiffusionError::Steps { .. })));
    }
}
