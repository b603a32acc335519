//! Synthetic two-concept motion data.
//!
//! A motion is `L` frames of six channels: root x/y (0-1), left limb (2-3)
//! and right limb (4-5). Path concepts write only the root channels and
//! gesture concepts only the limb channels, so a holistic motion is the
//! channel-wise union of one path and one gesture.

mod dataset;
pub mod io;
pub mod oracle;

use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dataset::{
    dataset_hash, vocabulary, Dataset, DatasetConfig, DatasetManifest, MotionSample, Normalizer, PairParams, Split, LABELS_FILE,
    MANIFEST_FILE, MOTIONS_FILE,
};
pub use oracle::oracle_classify;

pub const CHANNELS: usize = 6;
pub const DEFAULT_LEN: usize = 64;
/// Generator output stays inside `[-C_MAX, C_MAX]`.
pub const C_MAX: f64 = 10.0;
pub const ROOT: std::ops::Range<usize> = 0..2;
pub const LIMBS: std::ops::Range<usize> = 2..6;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("unknown concept `{0}`")]
    UnknownConcept(String),
    #[error("invalid label ({0}, {1}): expected a path and a gesture")]
    InvalidPair(String, String),
    #[error("motion length {0} is below the minimum of 8")]
    TooShort(usize),
    #[error("compose: {0}")]
    Compose(String),
    #[error("held-out pair ({0}, {1}) is not in the 16-pair grid")]
    HeldOut(String, String),
    #[error("{0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Family {
    Path,
    Gesture,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Concept {
    Straight,
    Circle,
    Zigzag,
    Stop,
    WaveLeft,
    WaveRight,
    RaiseBoth,
    Idle,
}

impl Concept {
    pub const ALL: [Concept; 8] = [
        Concept::Straight,
        Concept::Circle,
        Concept::Zigzag,
        Concept::Stop,
        Concept::WaveLeft,
        Concept::WaveRight,
        Concept::RaiseBoth,
        Concept::Idle,
    ];
    pub const PATHS: [Concept; 4] = [Concept::Straight, Concept::Circle, Concept::Zigzag, Concept::Stop];
    pub const GESTURES: [Concept; 4] = [Concept::WaveLeft, Concept::WaveRight, Concept::RaiseBoth, Concept::Idle];

    pub fn name(self) -> &'static str {
        match self {
            Concept::Straight => "straight",
            Concept::Circle => "circle",
            Concept::Zigzag => "zigzag",
            Concept::Stop => "stop",
            Concept::WaveLeft => "wave_left",
            Concept::WaveRight => "wave_right",
            Concept::RaiseBoth => "raise_both",
            Concept::Idle => "idle",
        }
    }

    pub fn family(self) -> Family {
        match self {
            Concept::Straight | Concept::Circle | Concept::Zigzag | Concept::Stop => Family::Path,
            _ => Family::Gesture,
        }
    }

    /// Index within its family, `0..4`.
    pub fn family_index(self) -> usize {
        (self as usize) % 4
    }
}

impl fmt::Display for Concept {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Concept {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, DataError> {
        Concept::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| DataError::UnknownConcept(s.to_string()))
    }
}

/// A (path, gesture) pair describing a whole motion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct HolisticLabel {
    pub path: Concept,
    pub gesture: Concept,
}

impl HolisticLabel {
    pub fn new(path: Concept, gesture: Concept) -> Result<Self, DataError> {
        if path.family() != Family::Path || gesture.family() != Family::Gesture {
            return Err(DataError::InvalidPair(path.to_string(), gesture.to_string()));
        }
        Ok(Self { path, gesture })
    }

    pub fn parse(path: &str, gesture: &str) -> Result<Self, DataError> {
        Self::new(path.parse()?, gesture.parse()?)
    }

    /// All 16 pairs, path-major.
    pub fn grid() -> Vec<HolisticLabel> {
        Concept::PATHS
            .into_iter()
            .flat_map(|p| Concept::GESTURES.into_iter().map(move |g| HolisticLabel { path: p, gesture: g }))
            .collect()
    }

    /// Position in [`HolisticLabel::grid`].
    pub fn index(self) -> usize {
        self.path.family_index() * 4 + self.gesture.family_index()
    }

    pub fn text(self) -> ConceptText {
        ConceptText(vec![self.path, self.gesture])
    }
}

impl fmt::Display for HolisticLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}+{}", self.path, self.gesture)
    }
}

/// A short concept token sequence (padding is added by the text encoder).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConceptText(pub Vec<Concept>);

impl ConceptText {
    pub fn single(c: Concept) -> Self {
        ConceptText(vec![c])
    }

    pub fn tokens(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.0.iter().map(|c| c.name())
    }
}

/// Split a holistic label into its two single-concept texts, path first.
pub fn decompose_label(label: HolisticLabel) -> Result<(ConceptText, ConceptText), DataError> {
    let label = HolisticLabel::new(label.path, label.gesture)?;
    Ok((ConceptText::single(label.path), ConceptText::single(label.gesture)))
}

/// Continuous parameters of one concept instance. Fields that a concept
/// does not use are zero.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ConceptParams {
    pub speed: f64,
    pub radius: f64,
    pub amplitude: f64,
    pub frequency: f64,
    pub phase: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConceptSpec {
    pub concept: Concept,
    pub params: ConceptParams,
}

/// Sampling ranges.
///
/// | concept    | speed    | radius | amplitude  | frequency  | phase    |
/// |------------|----------|--------|------------|------------|----------|
/// | straight   | [1, 4]   |        |            |            | [0, 2pi) |
/// | circle     |          | [1, 2] |            | [0.6, 1.0] | [0, 2pi) |
/// | zigzag     | [2, 4]   |        | [0.25, 0.5]| [2, 3]     | [0, 2pi) |
/// | wave_*     |          |        | [0.8, 1.5] | [2, 4]     | [0, 2pi) |
/// | raise_both |          |        | [0.8, 1.5] | [1.5, 3]   |          |
///
/// Circle frequency is revolutions over the clip; zigzag frequency is
/// triangle-wave cycles; raise_both reaches full amplitude at `s = 1/frequency`.
pub mod ranges {
    pub const STRAIGHT_SPEED: (f64, f64) = (1.0, 4.0);
    pub const CIRCLE_RADIUS: (f64, f64) = (1.0, 2.0);
    pub const CIRCLE_REVS: (f64, f64) = (0.6, 1.0);
    pub const ZIGZAG_SPEED: (f64, f64) = (2.0, 4.0);
    pub const ZIGZAG_AMPLITUDE: (f64, f64) = (0.25, 0.5);
    pub const ZIGZAG_CYCLES: (f64, f64) = (2.0, 3.0);
    pub const WAVE_AMPLITUDE: (f64, f64) = (0.8, 1.5);
    pub const WAVE_CYCLES: (f64, f64) = (2.0, 4.0);
    pub const RAISE_AMPLITUDE: (f64, f64) = (0.8, 1.5);
    pub const RAISE_RATE: (f64, f64) = (1.5, 3.0);
}

impl ConceptSpec {
    pub fn new(concept: Concept, params: ConceptParams) -> Self {
        Self { concept, params }
    }

    /// Draw parameters uniformly from the documented ranges.
    pub fn sample(concept: Concept, rng: &mut impl Rng) -> Self {
        use ranges::*;
        let mut u = |(lo, hi): (f64, f64)| rng.random_range(lo..hi);
        let mut p = ConceptParams::default();
        match concept {
            Concept::Straight => {
                p.speed = u(STRAIGHT_SPEED);
                p.phase = u((0.0, TAU));
            }
            Concept::Circle => {
                p.radius = u(CIRCLE_RADIUS);
                p.frequency = u(CIRCLE_REVS);
                p.phase = u((0.0, TAU));
            }
            Concept::Zigzag => {
                p.speed = u(ZIGZAG_SPEED);
                p.amplitude = u(ZIGZAG_AMPLITUDE);
                p.frequency = u(ZIGZAG_CYCLES);
                p.phase = u((0.0, TAU));
            }
            Concept::WaveLeft | Concept::WaveRight => {
                p.amplitude = u(WAVE_AMPLITUDE);
                p.frequency = u(WAVE_CYCLES);
                p.phase = u((0.0, TAU));
            }
            Concept::RaiseBoth => {
                p.amplitude = u(RAISE_AMPLITUDE);
                p.frequency = u(RAISE_RATE);
            }
            Concept::Stop | Concept::Idle => {}
        }
        Self { concept, params: p }
    }
}

/// `L x 6` frames, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionSequence {
    len: usize,
    data: Vec<f64>,
}

impl MotionSequence {
    pub fn zeros(len: usize) -> Self {
        Self {
            len,
            data: vec![0.0; len * CHANNELS],
        }
    }

    pub fn from_data(len: usize, data: Vec<f64>) -> Result<Self, DataError> {
        if data.len() != len * CHANNELS {
            return Err(DataError::Format(format!(
                "motion of {len} frames needs {} values, got {}",
                len * CHANNELS,
                data.len()
            )));
        }
        Ok(Self { len, data })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * CHANNELS..(t + 1) * CHANNELS]
    }

    pub fn get(&self, t: usize, ch: usize) -> f64 {
        self.data[t * CHANNELS + ch]
    }

    pub fn set(&mut self, t: usize, ch: usize, v: f64) {
        self.data[t * CHANNELS + ch] = v;
    }

    pub fn channel(&self, ch: usize) -> impl Iterator<Item = f64> + '_ {
        self.data.iter().skip(ch).step_by(CHANNELS).copied()
    }

    /// Copy with every channel outside `keep` set to zero.
    pub fn masked(&self, keep: std::ops::Range<usize>) -> Self {
        let mut out = self.clone();
        for (i, v) in out.data.iter_mut().enumerate() {
            if !keep.contains(&(i % CHANNELS)) {
                *v = 0.0;
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

fn triangle(x: f64) -> f64 {
    // period 1, range [-1, 1], tri(0) = 0, rising first
    let f = x - x.floor();
    if f < 0.25 {
        4.0 * f
    } else if f < 0.75 {
        2.0 - 4.0 * f
    } else {
        4.0 * f - 4.0
    }
}

/// Render one concept. Channels the concept does not own stay at rest (zero).
pub fn synth_concept_motion(spec: &ConceptSpec, len: usize) -> Result<MotionSequence, DataError> {
    if len < 8 {
        return Err(DataError::TooShort(len));
    }
    let p = spec.params;
    let mut m = MotionSequence::zeros(len);
    let denom = (len - 1) as f64;
    for t in 0..len {
        let s = t as f64 / denom;
        match spec.concept {
            Concept::Straight => {
                m.set(t, 0, p.speed * s * p.phase.cos());
                m.set(t, 1, p.speed * s * p.phase.sin());
            }
            Concept::Circle => {
                let theta = p.phase + TAU * p.frequency * s;
                // centred so the path starts at the origin
                m.set(t, 0, p.radius * (theta.cos() - p.phase.cos()));
                m.set(t, 1, p.radius * (theta.sin() - p.phase.sin()));
            }
            Concept::Zigzag => {
                let (ux, uy) = (p.phase.cos(), p.phase.sin());
                let fwd = p.speed * s;
                let lat = p.amplitude * triangle(p.frequency * s);
                m.set(t, 0, fwd * ux - lat * uy);
                m.set(t, 1, fwd * uy + lat * ux);
            }
            Concept::Stop | Concept::Idle => {}
            Concept::WaveLeft | Concept::WaveRight => {
                let base = if spec.concept == Concept::WaveLeft { 2 } else { 4 };
                let theta = TAU * p.frequency * s + p.phase;
                m.set(t, base, p.amplitude * theta.sin());
                m.set(t, base + 1, p.amplitude * theta.cos());
            }
            Concept::RaiseBoth => {
                let v = p.amplitude * (s * p.frequency).min(1.0);
                for ch in LIMBS {
                    m.set(t, ch, v);
                }
            }
        }
    }
    Ok(m)
}

/// Root channels from `path`, limb channels from `gesture`.
pub fn compose_pair(path: &MotionSequence, gesture: &MotionSequence) -> Result<MotionSequence, DataError> {
    if path.len() != gesture.len() {
        return Err(DataError::Compose(format!("lengths differ: {} vs {}", path.len(), gesture.len())));
    }
    if LIMBS.flat_map(|ch| path.channel(ch)).any(|v| v != 0.0) {
        return Err(DataError::Compose("path motion has non-zero limb channels".into()));
    }
    for ch in ROOT {
        let first = gesture.get(0, ch);
        if gesture.channel(ch).any(|v| v != first) {
            return Err(DataError::Compose("gesture motion has a moving root".into()));
        }
    }
    let mut out = path.clone();
    for t in 0..out.len() {
        for ch in LIMBS {
            out.set(t, ch, gesture.get(t, ch));
        }
    }
    Ok(out)
}

/// Holistic motion for a pair of sampled specs.
pub fn synth_pair(path: &ConceptSpec, gesture: &ConceptSpec, len: usize) -> Result<MotionSequence, DataError> {
    HolisticLabel::new(path.concept, gesture.concept)?;
    compose_pair(&synth_concept_motion(path, len)?, &synth_concept_motion(gesture, len)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec(concept: Concept, f: impl FnOnce(&mut ConceptParams)) -> ConceptSpec {
        let mut p = ConceptParams::default();
        f(&mut p);
        ConceptSpec::new(concept, p)
    }

    #[test]
    fn straight_has_constant_step() {
        let m = synth_concept_motion(&spec(Concept::Straight, |p| p.speed = 1.0), 64).unwrap();
        let x: Vec<f64> = m.channel(0).collect();
        let step = x[1] - x[0];
        assert!(step > 0.0);
        for w in x.windows(2) {
            assert!(w[1] > w[0]);
            assert!((w[1] - w[0] - step).abs() < 1e-12);
        }
        assert!(LIMBS.flat_map(|c| m.channel(c)).all(|v| v == 0.0));
    }

    #[test]
    fn idle_is_rest() {
        let m = synth_concept_motion(&spec(Concept::Idle, |_| {}), 64).unwrap();
        assert!(m.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn circle_stays_on_radius() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let s = ConceptSpec::sample(Concept::Circle, &mut rng);
            let m = synth_concept_motion(&s, 64).unwrap();
            let (r, phi) = (s.params.radius, s.params.phase);
            let centre = (-r * phi.cos(), -r * phi.sin());
            let worst = (0..64)
                .map(|t| ((m.get(t, 0) - centre.0).hypot(m.get(t, 1) - centre.1) - r).abs())
                .fold(0.0, f64::max);
            assert!(worst < 1e-6, "{worst}");
            assert_eq!((m.get(0, 0).abs() < 1e-12, m.get(0, 1).abs() < 1e-12), (true, true));
        }
    }

    #[test]
    fn rejects_short_and_unknown() {
        assert!(matches!(
            synth_concept_motion(&spec(Concept::Stop, |_| {}), 7),
            Err(DataError::TooShort(7))
        ));
        assert!("moonwalk".parse::<Concept>().is_err());
        assert!(HolisticLabel::parse("circle", "zigzag").is_err());
    }

    #[test]
    fn compose_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let straight = synth_concept_motion(&ConceptSpec::sample(Concept::Straight, &mut rng), 64).unwrap();
        let idle = synth_concept_motion(&ConceptSpec::sample(Concept::Idle, &mut rng), 64).unwrap();
        assert_eq!(compose_pair(&straight, &idle).unwrap(), straight);

        let stop = synth_concept_motion(&ConceptSpec::sample(Concept::Stop, &mut rng), 64).unwrap();
        let wave = synth_concept_motion(&ConceptSpec::sample(Concept::WaveLeft, &mut rng), 64).unwrap();
        assert_eq!(compose_pair(&stop, &wave).unwrap(), wave);

        let circle = synth_concept_motion(&ConceptSpec::sample(Concept::Circle, &mut rng), 64).unwrap();
        let raise = synth_concept_motion(&ConceptSpec::sample(Concept::RaiseBoth, &mut rng), 64).unwrap();
        let both = compose_pair(&circle, &raise).unwrap();
        for t in 0..64 {
            assert_eq!(&both.frame(t)[..2], &circle.frame(t)[..2]);
            assert_eq!(&both.frame(t)[2..], &raise.frame(t)[2..]);
        }
    }

    #[test]
    fn compose_rejects_bad_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let wave = synth_concept_motion(&ConceptSpec::sample(Concept::WaveRight, &mut rng), 64).unwrap();
        let zig = synth_concept_motion(&ConceptSpec::sample(Concept::Zigzag, &mut rng), 64).unwrap();
        assert!(compose_pair(&wave, &wave).is_err());
        assert!(compose_pair(&zig, &zig).is_err());
        assert!(compose_pair(&zig, &MotionSequence::zeros(32)).is_err());
    }

    #[test]
    fn decompose_examples() {
        let (a, b) = decompose_label(HolisticLabel::parse("zigzag", "wave_left").unwrap()).unwrap();
        assert_eq!((a.tokens().collect::<Vec<_>>(), b.tokens().collect::<Vec<_>>()), (vec!["zigzag"], vec!["wave_left"]));
        let (a, b) = decompose_label(HolisticLabel::parse("stop", "idle").unwrap()).unwrap();
        assert_eq!((a.0[0], b.0[0]), (Concept::Stop, Concept::Idle));
        let bad = HolisticLabel {
            path: Concept::Idle,
            gesture: Concept::Stop,
        };
        assert!(decompose_label(bad).is_err());
    }

    #[test]
    fn decompose_round_trips_all_pairs() {
        let grid = HolisticLabel::grid();
        assert_eq!(grid.len(), 16);
        for (i, label) in grid.into_iter().enumerate() {
            let (a, b) = decompose_label(label).unwrap();
            assert_eq!(HolisticLabel::new(a.0[0], b.0[0]).unwrap(), label);
            assert_eq!(label.index(), i);
        }
    }

    #[test]
    fn generator_respects_channel_ownership_and_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for c in Concept::ALL {
            for _ in 0..50 {
                let m = synth_concept_motion(&ConceptSpec::sample(c, &mut rng), 64).unwrap();
                let foreign = if c.family() == Family::Path { LIMBS } else { ROOT };
                assert!(foreign.flat_map(|ch| m.channel(ch)).all(|v| v == 0.0), "{c}");
                assert!(m.data().iter().all(|v| v.abs() <= C_MAX));
            }
        }
    }
}
