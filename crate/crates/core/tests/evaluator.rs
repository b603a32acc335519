use std::sync::OnceLock;

use motion_energy::data::{Dataset, DatasetConfig, HolisticLabel, MotionSequence, Split};
use motion_energy::eval::{metrics, train_evaluator, EvaluatorConfig, EvaluatorModel};

struct Fixture {
    data: Dataset,
    trained: EvaluatorModel,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let data = Dataset::generate(&DatasetConfig::default()).unwrap();
        let (trained, log) = train_evaluator(&data, &EvaluatorConfig::default(), None).unwrap();
        assert!(log.iter().all(|e| e.loss.is_finite()));
        Fixture { data, trained }
    })
}

fn test_split() -> (Vec<MotionSequence>, Vec<HolisticLabel>) {
    let d = &fixture().data;
    (d.split(Split::Test).map(|s| s.motion.clone()).collect(), d.split(Split::Test).map(|s| s.label).collect())
}

#[test]
fn trained_matches_own_text_on_test_split() {
    let (m, l) = test_split();
    let f = fixture().trained.matched_fraction(&m, &l).unwrap();
    assert!(f >= 0.95, "matched fraction {f}");
}

#[test]
fn trained_retrieval_beats_untrained() {
    let (m, l) = test_split();
    let idx: Vec<usize> = l.iter().map(|x| x.index()).collect();
    let fx = &fixture();
    let rp = |ev: &EvaluatorModel| {
        let mf = ev.motion_features(&m).unwrap();
        let tf = ev.text_features(&l).unwrap();
        metrics::r_precision(&mf, &tf, &idx, metrics::R_PRECISION_POOL, 0).unwrap()
    };
    let trained = rp(&fx.trained);
    let untrained = rp(&EvaluatorModel::untrained(0, fx.data.normalizer()).unwrap());
    assert!(trained[0] <= trained[1] && trained[1] <= trained[2]);
    assert!(trained[0] > untrained[0], "{trained:?} vs {untrained:?}");
}

#[test]
fn untrained_retrieval_is_near_chance() {
    // predictions that ignore the true label hit at most the largest label
    // share in expectation; allow its binomial 3 sigma
    let (m, l) = test_split();
    let ev = EvaluatorModel::untrained(0, fixture().data.normalizer()).unwrap();
    let f = ev.matched_fraction(&m, &l).unwrap();
    let largest = HolisticLabel::grid()
        .iter()
        .map(|g| l.iter().filter(|x| *x == g).count())
        .max()
        .unwrap() as f64
        / l.len() as f64;
    let n = l.len() as f64;
    let band = 3.0 * (largest * (1.0 - largest) / n).sqrt();
    assert!(f <= largest + band, "untrained matched fraction {f}, largest label share {largest}");
}

#[test]
fn features_are_deterministic() {
    let (m, l) = test_split();
    let ev = &fixture().trained;
    assert_eq!(ev.motion_features(&m[..16]).unwrap(), ev.motion_features(&m[..16]).unwrap());
    assert_eq!(ev.text_features(&l[..16]).unwrap(), ev.text_features(&l[..16]).unwrap());
}

#[test]
fn training_is_deterministic_under_fixed_seed() {
    let data = Dataset::generate(&DatasetConfig {
        n_train: 128,
        n_test: 16,
        n_held_out: 4,
        ..DatasetConfig::default()
    })
    .unwrap();
    let cfg = EvaluatorConfig {
        epochs: 2,
        seed: 5,
        ..EvaluatorConfig::default()
    };
    let (a, la) = train_evaluator(&data, &cfg, None).unwrap();
    let (b, lb) = train_evaluator(&data, &cfg, None).unwrap();
    assert_eq!(a.store, b.store);
    assert_eq!(la.iter().map(|e| e.loss).collect::<Vec<_>>(), lb.iter().map(|e| e.loss).collect::<Vec<_>>());
}

#[test]
fn checkpoint_round_trip_preserves_features() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("ev.ckpt");
    let fx = fixture();
    fx.trained.save(&p).unwrap();
    let back = EvaluatorModel::load(&p, fx.data.normalizer()).unwrap();
    let (m, _) = test_split();
    assert_eq!(back.motion_features(&m[..8]).unwrap(), fx.trained.motion_features(&m[..8]).unwrap());
}
