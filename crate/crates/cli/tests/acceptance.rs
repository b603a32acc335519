//! Acceptance criteria 1 to 7. Each test prints one verdict line to stderr
//! (uncaptured) before asserting, so `cargo test` output always shows the
//! full pass/fail list.

use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use motion_energy::data::{Dataset, DatasetConfig, HolisticLabel, Split};
use motion_energy::diffusion::*;
use motion_energy::eval::{decomposition_scores, fid, r_precision, score_holistic, DecompositionScores, FamilyAccuracy};
use motion_energy::eval::metrics::gaussian_features;
use motion_energy::nn;
use motion_energy::pipeline::{self, file_hash, Workspace};
use motion_energy::tensor::gradcheck::{check_catalogue, grad_check_params};
use motion_energy::text::{partition_tensor, TEXT_DIM, TEXT_LEN};
use motion_energy::vae::{LatentCodec, VaeConfig};
use motion_energy::{Graph, ParameterStore, Tensor, TensorError};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn verdict(n: u32, name: &str, pass: bool, detail: &str) {
    let line = format!("acceptance {n} {name}: {} | {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(pass, "criterion {n} failed: {detail}");
}

fn within(start: Instant, budget: Duration) -> (bool, String) {
    let e = start.elapsed();
    (e <= budget, format!("{:.1}s of {}s", e.as_secs_f64(), budget.as_secs()))
}

// ---------- shared tiny models for the identity and gradient suites ----------

fn tiny(variant: Variant, mode: Mode) -> TrainConfig {
    let mut cfg = TrainConfig::toy(VariantConfig::new(variant, mode));
    cfg.denoiser = DenoiserConfig {
        blocks: 2,
        width: 16,
        heads: 4,
        time_dim: 8,
        ff_mult: 2,
    };
    cfg.batch_size = 1;
    cfg
}

fn randn<F: motion_energy::Scalar>(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<F> {
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::from_f64(shape, &v).unwrap()
}

fn model<F: motion_energy::Scalar>(cfg: &TrainConfig, seed: u64) -> DiffusionModel<F> {
    DiffusionModel::init(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

// ---------- criterion 1 ----------

fn compose(m: &DiffusionModel<f32>, z: &Tensor<f32>, t: &[usize], ctx: &[&Tensor<f32>], mode: Mode) -> Tensor<f32> {
    let mut g = Graph::new();
    let zv = g.constant(z.clone()).unwrap();
    let cs: Vec<_> = ctx.iter().map(|c| g.constant((*c).clone()).unwrap()).collect();
    let e = m.denoiser.compose_eps(&mut g, &m.store, zv, t, &cs, mode, Aggregation::Mean).unwrap();
    g.value(e).clone()
}

fn single(m: &DiffusionModel<f32>, z: &Tensor<f32>, t: &[usize], c: &Tensor<f32>) -> Tensor<f32> {
    let mut g = Graph::new();
    let zv = g.constant(z.clone()).unwrap();
    let cv = g.constant(c.clone()).unwrap();
    let e = m.denoiser.forward(&mut g, &m.store, zv, t, &[cv], Aggregation::Mean).unwrap();
    g.value(e).clone()
}

#[test]
fn criterion_1_identity_suite() {
    let start = Instant::now();
    let mut failures = Vec::new();

    // one-branch decomposed cross-attention against plain cross-attention
    for seed in 0..5 {
        let m: DiffusionModel<f32> = model(&tiny(Variant::Exp, Mode::Semantic), seed);
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let mut g = Graph::new();
        let x = g.constant(randn(&[3 * 16, 16], &mut rng)).unwrap();
        let c = g.constant(randn(&[3 * TEXT_LEN, TEXT_DIM], &mut rng)).unwrap();
        for block in 0..2 {
            let prefix = format!("den.block{block}.cross");
            let ca = nn::attention(&mut g, &m.store, &prefix, x, c, 3, 4).unwrap();
            for agg in [Aggregation::Mean, Aggregation::Sum] {
                let d = m.denoiser.dca(&mut g, &m.store, &prefix, x, &[c], 3, agg).unwrap();
                if g.value(d) != g.value(ca) {
                    failures.push(format!("dca K=1 seed {seed} block {block} {agg:?}"));
                }
            }
        }
    }

    // composing two copies of one condition under mean aggregation
    let mut worst = 0.0f32;
    for mode in [Mode::Latent, Mode::Semantic] {
        for seed in 0..5 {
            let m: DiffusionModel<f32> = model(&tiny(Variant::Exp, mode), 10 + seed);
            let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
            let z = randn(&[3, 16, 16], &mut rng);
            let c = randn(&[3 * TEXT_LEN, TEXT_DIM], &mut rng);
            let t = [1, 500, 1000];
            let d = compose(&m, &z, &t, &[&c, &c], mode).max_abs_diff(&single(&m, &z, &t, &c));
            worst = worst.max(d);
            if d > 1e-6 {
                failures.push(format!("duplicate mean {mode} seed {seed}: {d:e}"));
            }
        }
    }

    // partition then concat along the embedding axis
    let mut rng = ChaCha8Rng::seed_from_u64(300);
    for k in [1, 2, 4, 8, 16] {
        let c: Tensor<f32> = randn(&[TEXT_LEN, TEXT_DIM], &mut rng);
        let parts = partition_tensor(&c, k).unwrap();
        let mut g = Graph::new();
        let vs: Vec<_> = parts.into_iter().map(|p| g.constant(p).unwrap()).collect();
        let back = g.concat(&vs, 1).unwrap();
        if g.value(back) != &c {
            failures.push(format!("round trip k={k}"));
        }
    }

    let (fast, time) = within(start, Duration::from_secs(10));
    let pass = failures.is_empty() && fast;
    verdict(1, "identities", pass, &format!("duplicate-mean max diff {worst:e}, {time}, failures {failures:?}"));
}

// ---------- criterion 2 ----------

fn to_tensor_err(e: DiffusionError) -> TensorError {
    match e {
        DiffusionError::Tensor(t) => t,
        e => panic!("{e}"),
    }
}

#[test]
fn criterion_2_gradient_suite() {
    let start = Instant::now();
    let mut worst: Vec<(String, f64)> = check_catalogue(3, 0).unwrap().into_iter().map(|(n, e)| (n.to_string(), e)).collect();
    for variant in [Variant::Exp, Variant::Oss, Variant::Sc] {
        for mode in [Mode::Latent, Mode::Semantic] {
            // Exp mixes two conditioning routes by tau; pin each
            let taus = if variant == Variant::Exp { vec![0.0, 1.0] } else { vec![0.7] };
            for tau in taus {
                let mut cfg = tiny(variant, mode);
                cfg.variant.tau = tau;
                let m: DiffusionModel<f64> = model(&cfg, 11);
                let labels = HolisticLabel::grid();
                let mut rng = ChaCha8Rng::seed_from_u64(12);
                let lat: Vec<f32> = (0..labels.len() * 256).map(|_| StandardNormal.sample(&mut rng)).collect();
                let data = TrainSet::new(&lat, &labels).unwrap();
                let b: Batch<f64> = sample_batch(data, &cfg, &NoiseSchedule::default(), &mut rng).unwrap();
                let r = grad_check_params(
                    |g, s: &ParameterStore<f64>| m.loss(g, s, &b).map(|l| l.total).map_err(to_tensor_err),
                    &m.store,
                    1e-5,
                    4,
                )
                .unwrap();
                worst.push((format!("{variant}-{mode}-tau{tau}"), r.max_rel_err));
            }
        }
    }
    let bad: Vec<_> = worst.iter().filter(|(_, e)| !(*e <= 1e-4)).collect();
    let max = worst.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    let (fast, time) = within(start, Duration::from_secs(300));
    verdict(
        2,
        "gradients",
        bad.is_empty() && fast,
        &format!("{} checks, max rel err {max:.2e}, {time}, over tolerance {bad:?}", worst.len()),
    );
}

// ---------- criterion 3 ----------

#[test]
fn criterion_3_statistical_suite() {
    let start = Instant::now();
    let mut notes = Vec::new();
    let mut pass = true;

    let s = NoiseSchedule::default();
    let n = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for t in [1, 10, 250, 500, 1000] {
        let eps: Vec<f32> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let z = s.q_sample(&vec![0.8f32; n], t, &eps).unwrap();
        let mean = z.iter().map(|&v| v as f64).sum::<f64>() / n as f64;
        let var = z.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let want = 1.0 - s.alpha_bar_at(t);
        // standard error of a Gaussian sample variance
        let se = want * (2.0 / (n - 1) as f64).sqrt();
        let z_score = (var - want).abs() / se;
        pass &= z_score < 3.0;
        notes.push(format!("q t={t} {z_score:.2}se"));
    }

    // Gaussian FID: |dmu|^2 + Tr(S1 + S2 - 2 (S1 S2)^1/2)
    let shift = [1.0, -2.0, 0.5, 0.0];
    let cases: [(&[f64], f64, f64); 3] = [
        (&shift, 1.0, shift.iter().map(|v| v * v).sum()),
        (&[0.0; 4], 2.0, 4.0 * (1.0 - 2.0f64).powi(2)),
        (&shift, 0.5, shift.iter().map(|v| v * v).sum::<f64>() + 4.0 * (1.0 - 0.5f64).powi(2)),
    ];
    for (i, (mu, sd, want)) in cases.iter().enumerate() {
        let a = gaussian_features(20_000, &[0.0; 4], 1.0, &mut ChaCha8Rng::seed_from_u64(40 + i as u64));
        let b = gaussian_features(20_000, mu, *sd, &mut ChaCha8Rng::seed_from_u64(50 + i as u64));
        let got = fid(&a, &b).unwrap();
        let rel = (got - want).abs() / want;
        pass &= rel < 0.05;
        notes.push(format!("fid{i} {got:.3}/{want:.3}"));
    }

    // uninformative features retrieve at k/pool
    let n = 4000;
    let labels: Vec<usize> = (0..n).map(|i| i % 16).collect();
    let m = gaussian_features(n, &[0.0; 8], 1.0, &mut ChaCha8Rng::seed_from_u64(60));
    let t = gaussian_features(n, &[0.0; 8], 1.0, &mut ChaCha8Rng::seed_from_u64(61));
    let r = r_precision(&m, &t, &labels, 32, 1).unwrap();
    for (k, &got) in r.iter().enumerate() {
        let p = (k + 1) as f64 / 32.0;
        let band = 3.0 * (p * (1.0 - p) / n as f64).sqrt();
        pass &= (got - p).abs() <= band;
        notes.push(format!("top{} {got:.4}/{p:.4}", k + 1));
    }

    let (fast, time) = within(start, Duration::from_secs(120));
    verdict(3, "statistics", pass && fast, &format!("{}, {time}", notes.join(" ")));
}

// ---------- trained fixture for criteria 4 to 6 ----------

const SEEN_SEEDS: usize = 10;
const DECOMPOSITION_SEEDS: usize = 100;

struct Trained {
    _dir: tempfile::TempDir,
    ws: Workspace,
    data: Dataset,
    codec: LatentCodec,
}

fn trained() -> &'static Trained {
    static T: OnceLock<Trained> = OnceLock::new();
    T.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let ws = Workspace::new(dir.path());
        pipeline::gen_data(&ws, &DatasetConfig::default()).unwrap();
        pipeline::train_vae_stage(&ws, &VaeConfig::default()).unwrap();
        let data = ws.load_dataset().unwrap();
        let codec = ws.load_codec(&data).unwrap();
        Trained { _dir: dir, ws, data, codec }
    })
}

fn toy(variant: Variant, tau: f64) -> TrainConfig {
    let mut v = VariantConfig::new(variant, Mode::Latent);
    v.tau = tau;
    TrainConfig::toy(v)
}

fn train(name: &str, cfg: &TrainConfig) -> DiffusionModel<f32> {
    pipeline::train_diffusion_stage(&trained().ws, cfg, name).unwrap().0
}

fn exp_model() -> &'static DiffusionModel<f32> {
    static M: OnceLock<DiffusionModel<f32>> = OnceLock::new();
    M.get_or_init(|| train("exp", &toy(Variant::Exp, 0.7)))
}

fn seen_labels() -> Vec<HolisticLabel> {
    let held = &trained().data.manifest.held_out_pairs;
    HolisticLabel::grid().into_iter().filter(|l| !held.contains(l)).collect()
}

/// Oracle accuracy of holistic generation on every seen pair, `SEEN_SEEDS` chains each.
fn holistic_accuracy(m: &DiffusionModel<f32>) -> FamilyAccuracy {
    let targets: Vec<HolisticLabel> = seen_labels().into_iter().flat_map(|l| std::iter::repeat_n(l, SEEN_SEEDS)).collect();
    let conds: Vec<_> = targets.iter().map(|l| m.holistic_condition(*l).unwrap()).collect();
    let seeds: Vec<u64> = (0..targets.len() as u64).map(|i| (7 << 40) + i).collect();
    let z = sample_latents(m, &NoiseSchedule::default(), &conds, &seeds, SAMPLE_STEPS).unwrap();
    score_holistic(&targets, &trained().codec.decode(&z).unwrap())
}

fn exp_holistic() -> &'static FamilyAccuracy {
    static A: OnceLock<FamilyAccuracy> = OnceLock::new();
    A.get_or_init(|| holistic_accuracy(exp_model()))
}

fn exp_decomposition() -> &'static DecompositionScores {
    static D: OnceLock<DecompositionScores> = OnceLock::new();
    D.get_or_init(|| {
        let t = trained();
        let labels: Vec<HolisticLabel> = t.data.split(Split::Test).map(|s| s.label).collect();
        decomposition_scores(
            exp_model(),
            &t.codec,
            &NoiseSchedule::default(),
            &labels,
            &t.data.manifest.held_out_pairs,
            DECOMPOSITION_SEEDS,
            SAMPLE_STEPS,
            0,
        )
        .unwrap()
    })
}

fn fmt(a: &FamilyAccuracy) -> String {
    format!("path {:.3} gesture {:.3} joint {:.3} (n={})", a.path, a.gesture, a.joint, a.count)
}

#[test]
fn criterion_4_end_to_end_exp() {
    let hol = exp_holistic();
    let d = exp_decomposition();
    // chance over the 4 x 4 grid is 1/16, per family 1/4
    let a = hol.joint > 3.0 / 16.0;
    let b = d.path_rest_fraction > 0.5;
    let c = d.recombination.path > 0.75 && d.recombination.gesture > 0.75;
    verdict(
        4,
        "end-to-end exp",
        a && b && c,
        &format!(
            "(a) {} | (b) rest fraction {:.3} | (c) held-out {} | decomposition {}",
            fmt(hol),
            d.path_rest_fraction,
            fmt(&d.recombination),
            fmt(&d.decomposition)
        ),
    );
}

#[test]
fn criterion_5_oss_and_sc() {
    let exp = exp_holistic();
    let oss = holistic_accuracy(&train("oss", &toy(Variant::Oss, 0.7)));
    let sc_cfg = toy(Variant::Sc, 0.7);
    let sc = train("sc", &sc_cfg);
    let sc_acc = holistic_accuracy(&sc);
    let held = &trained().data.manifest.held_out_pairs;
    let sc_init: DiffusionModel<f32> = DiffusionModel::init(&sc_cfg, &mut ChaCha8Rng::seed_from_u64(sc_cfg.seed)).unwrap();
    let (before, after) = (sc_init.sc_loss_value(held).unwrap(), sc.sc_loss_value(held).unwrap());
    let gap_oss = (oss.joint - exp.joint).abs();
    let gap_sc = (sc_acc.joint - exp.joint).abs();
    verdict(
        5,
        "oss and sc",
        gap_oss <= 0.15 && gap_sc <= 0.15 && after < before,
        &format!(
            "exp joint {:.3}, oss {} gap {gap_oss:.3}, sc {} gap {gap_sc:.3}, held-out L_SC {before:.4} -> {after:.4}",
            exp.joint,
            fmt(&oss),
            fmt(&sc_acc)
        ),
    );
}

#[test]
fn criterion_6_tau_mixing() {
    let mixed = exp_holistic();
    let decomposed_only = holistic_accuracy(&train("exp-tau0", &toy(Variant::Exp, 0.0)));
    verdict(
        6,
        "tau mixing",
        mixed.joint >= decomposed_only.joint,
        &format!("tau 0.7 {} | tau 0.0 {}", fmt(mixed), fmt(&decomposed_only)),
    );
}

// ---------- criterion 7 ----------

const MINI: &str = r#"
[data]
n_train = 64
n_test = 60
n_held_out = 8

[vae]
epochs = 1
channels = 16

[evaluator]
epochs = 1

[diffusion]
steps = 4
batch_size = 8

[diffusion.denoiser]
blocks = 1
width = 16
heads = 2
time_dim = 8
ff_mult = 2

[eval]
n_generated = 600
decomposition_seeds = 4
mm_texts = 2
steps = 2
"#;

/// Full CLI pipeline in a fresh directory; returns (artefact hashes, report bytes).
fn mini_pipeline() -> (Vec<(String, String)>, Vec<u8>) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("mini.toml");
    std::fs::write(&cfg, MINI).unwrap();
    let report = dir.path().join("report.json");
    let stages: [&[&str]; 5] = [
        &["gen-data"],
        &["train-vae"],
        &["train-eval"],
        &["train-diffusion", "--variant", "sc", "--mode", "latent", "--name", "model"],
        &["eval", "--model", "model", "--report", report.to_str().unwrap()],
    ];
    for args in stages {
        let o = Command::new(env!("CARGO_BIN_EXE_motion-energy"))
            .env_remove("MOTION_ENERGY_OUT")
            .env("RUST_LOG", "warn")
            .arg("--out")
            .arg(dir.path())
            .arg("--config")
            .arg(&cfg)
            .args(args)
            .output()
            .unwrap();
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let ws = Workspace::new(dir.path());
    let hash = |p: &Path| file_hash(p).unwrap();
    let hashes = vec![
        ("vae".to_string(), hash(&ws.vae_checkpoint())),
        ("evaluator".to_string(), hash(&ws.evaluator_checkpoint())),
        ("diffusion".to_string(), hash(&ws.diffusion_checkpoint("model"))),
    ];
    (hashes, std::fs::read(&report).unwrap())
}

#[test]
fn criterion_7_determinism() {
    let (h1, r1) = mini_pipeline();
    let (h2, r2) = mini_pipeline();
    let same_ckpt = h1 == h2;
    let same_report = r1 == r2;
    let short: Vec<String> = h1.iter().map(|(n, h)| format!("{n} {}", &h[..12])).collect();
    verdict(
        7,
        "determinism",
        same_ckpt && same_report,
        &format!("checkpoints identical {same_ckpt} [{}], report identical {same_report} ({} bytes)", short.join(", "), r1.len()),
    );
}
