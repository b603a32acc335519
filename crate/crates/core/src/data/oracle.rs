//! Analytic concept classifier over raw (de-normalised) motions.
//!
//! Path features come from the root channels only and gesture features from
//! the limb channels only. Thresholds were placed inside the gaps measured by
//! `tests::calibration_margins` over the seeded generator sweep.

use std::f64::consts::PI;

use super::{Concept, HolisticLabel, MotionSequence, LIMBS};

/// Root spread (max distance from the mean position) below which the path is `stop`.
pub const STOP_SPREAD: f64 = 0.25;
/// RMS distance from the principal axis below which a moving path is `straight`.
pub const STRAIGHT_LATERAL: f64 = 0.06;
/// |net turning| / total turning above which a curved path is `circle`.
pub const CIRCLE_TURN_RATIO: f64 = 0.6;
/// Mean |limb channel| below which the gesture is `idle`. Also the rest-pose threshold.
pub const REST_LIMB: f64 = 0.13;
/// |left - right| / (left + right) limb energy above which the gesture is a wave.
pub const WAVE_BALANCE: f64 = 0.5;
/// Frame offset for finite-difference headings.
pub const HEADING_LAG: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathFeatures {
    pub spread: f64,
    pub lateral_rms: f64,
    pub turn_ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GestureFeatures {
    pub limb_mean_abs: f64,
    pub balance: f64,
}

fn wrap(a: f64) -> f64 {
    let mut a = a % (2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    } else if a <= -PI {
        a += 2.0 * PI;
    }
    a
}

pub fn path_features(m: &MotionSequence) -> PathFeatures {
    let n = m.len();
    let xs: Vec<f64> = m.channel(0).collect();
    let ys: Vec<f64> = m.channel(1).collect();
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let spread = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (x - mx).hypot(y - my))
        .fold(0.0, f64::max);

    // principal axis of the centred point cloud
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(&ys) {
        let (dx, dy) = (x - mx, y - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    let angle = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    let (nx, ny) = (-angle.sin(), angle.cos());
    let lateral_rms = (xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| ((x - mx) * nx + (y - my) * ny).powi(2))
        .sum::<f64>()
        / n as f64)
        .sqrt();

    let lag = HEADING_LAG.min(n - 1);
    let headings: Vec<f64> = (0..n - lag)
        .map(|t| (ys[t + lag] - ys[t]).atan2(xs[t + lag] - xs[t]))
        .collect();
    let (mut net, mut total) = (0.0, 0.0);
    for w in headings.windows(2) {
        let d = wrap(w[1] - w[0]);
        net += d;
        total += d.abs();
    }
    let turn_ratio = if total > 1e-9 { net.abs() / total } else { 0.0 };
    PathFeatures {
        spread,
        lateral_rms,
        turn_ratio,
    }
}

pub fn gesture_features(m: &MotionSequence) -> GestureFeatures {
    let n = m.len() as f64;
    let limb_mean_abs = LIMBS.flat_map(|ch| m.channel(ch)).map(f64::abs).sum::<f64>() / (4.0 * n);
    let energy = |a: usize| (a..a + 2).flat_map(|ch| m.channel(ch)).map(|v| v * v).sum::<f64>();
    let (left, right) = (energy(2), energy(4));
    let balance = if left + right > 0.0 {
        (left - right) / (left + right)
    } else {
        0.0
    };
    GestureFeatures { limb_mean_abs, balance }
}

pub fn classify_path(f: &PathFeatures) -> Concept {
    if f.spread < STOP_SPREAD {
        Concept::Stop
    } else if f.lateral_rms < STRAIGHT_LATERAL {
        Concept::Straight
    } else if f.turn_ratio > CIRCLE_TURN_RATIO {
        Concept::Circle
    } else {
        Concept::Zigzag
    }
}

pub fn classify_gesture(f: &GestureFeatures) -> Concept {
    if f.limb_mean_abs < REST_LIMB {
        Concept::Idle
    } else if f.balance > WAVE_BALANCE {
        Concept::WaveLeft
    } else if f.balance < -WAVE_BALANCE {
        Concept::WaveRight
    } else {
        Concept::RaiseBoth
    }
}

/// Whether the limb channels are at rest by the gesture classifier's own threshold.
pub fn limbs_at_rest(m: &MotionSequence) -> bool {
    gesture_features(m).limb_mean_abs < REST_LIMB
}

/// Nearest (path, gesture) label of a motion in raw units.
pub fn oracle_classify(m: &MotionSequence) -> HolisticLabel {
    HolisticLabel {
        path: classify_path(&path_features(m)),
        gesture: classify_gesture(&gesture_features(m)),
    }
}

#[cfg(test)]
mod tests {
    use super::super::{compose_pair, synth_concept_motion, ConceptSpec, Family, ROOT};
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const DRAWS: usize = 100;

    fn sweep(concept: Concept) -> Vec<MotionSequence> {
        let mut rng = ChaCha8Rng::seed_from_u64(0xCA11 + concept as u64);
        (0..DRAWS)
            .map(|_| synth_concept_motion(&ConceptSpec::sample(concept, &mut rng), 64).unwrap())
            .collect()
    }

    /// Brute-force feature ranges per class; each threshold must fall
    /// strictly between the classes it separates.
    #[test]
    fn calibration_margins() {
        let range = |c: Concept, f: &dyn Fn(&MotionSequence) -> f64| {
            sweep(c).iter().map(f).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
        };
        let spread = |m: &MotionSequence| path_features(m).spread;
        let lateral = |m: &MotionSequence| path_features(m).lateral_rms;
        let turn = |m: &MotionSequence| path_features(m).turn_ratio;
        let limb = |m: &MotionSequence| gesture_features(m).limb_mean_abs;
        let bal = |m: &MotionSequence| gesture_features(m).balance;

        let stop_hi = range(Concept::Stop, &spread).1;
        let moving_lo = [Concept::Straight, Concept::Circle, Concept::Zigzag]
            .map(|c| range(c, &spread).0)
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        assert!(stop_hi < STOP_SPREAD && STOP_SPREAD < moving_lo, "spread {stop_hi} | {moving_lo}");

        let straight_hi = range(Concept::Straight, &lateral).1;
        let curved_lo = range(Concept::Circle, &lateral).0.min(range(Concept::Zigzag, &lateral).0);
        assert!(
            straight_hi < STRAIGHT_LATERAL && STRAIGHT_LATERAL < curved_lo,
            "lateral {straight_hi} | {curved_lo}"
        );

        let zig_hi = range(Concept::Zigzag, &turn).1;
        let circ_lo = range(Concept::Circle, &turn).0;
        assert!(zig_hi < CIRCLE_TURN_RATIO && CIRCLE_TURN_RATIO < circ_lo, "turn {zig_hi} | {circ_lo}");

        let idle_hi = range(Concept::Idle, &limb).1;
        let active_lo = [Concept::WaveLeft, Concept::WaveRight, Concept::RaiseBoth]
            .map(|c| range(c, &limb).0)
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        assert!(idle_hi < REST_LIMB && REST_LIMB < active_lo, "limb {idle_hi} | {active_lo}");

        let left_lo = range(Concept::WaveLeft, &bal).0;
        let right_hi = range(Concept::WaveRight, &bal).1;
        let (raise_lo, raise_hi) = range(Concept::RaiseBoth, &bal);
        assert!(raise_hi < WAVE_BALANCE && WAVE_BALANCE < left_lo);
        assert!(right_hi < -WAVE_BALANCE && -WAVE_BALANCE < raise_lo);
    }

    #[test]
    fn single_concepts_classify_exactly() {
        for c in Concept::ALL {
            for m in sweep(c) {
                let got = oracle_classify(&m);
                let want = if c.family() == Family::Path { got.path } else { got.gesture };
                assert_eq!(want, c);
            }
        }
    }

    #[test]
    fn composed_pairs_classify_exactly() {
        for label in HolisticLabel::grid() {
            for (p, g) in sweep(label.path).iter().zip(sweep(label.gesture).iter()) {
                let m = compose_pair(p, g).unwrap();
                assert_eq!(oracle_classify(&m), label);
                // channel separation
                assert_eq!(oracle_classify(&m.masked(ROOT)).path, label.path);
                assert_eq!(oracle_classify(&m.masked(LIMBS)).gesture, label.gesture);
            }
        }
    }

    #[test]
    fn rest_pose_is_stop_idle() {
        let label = oracle_classify(&MotionSequence::zeros(64));
        assert_eq!((label.path, label.gesture), (Concept::Stop, Concept::Idle));
    }
}
