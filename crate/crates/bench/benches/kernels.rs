use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use motion_energy::data::HolisticLabel;
use motion_energy::diffusion::{sample_batch, train_step, DiffusionModel, Mode, NoiseSchedule, TrainConfig, TrainSet, Variant, VariantConfig};
use motion_energy::eval::metrics::{fid, gaussian_features};
use motion_energy::tensor::AdamW;
use motion_energy::vae::LATENT_NUMEL;
use motion_energy::{Graph, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn matmul(c: &mut Criterion) {
    let mut group = c.benchmark_group("matmul_fwd_bwd");
    for n in [64usize, 256] {
        let a = Tensor::<f32>::from_f64(&[n, n], &(0..n * n).map(|i| (i as f64 * 0.01).sin()).collect::<Vec<_>>()).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(n), &a, |b, a| {
            b.iter(|| {
                let mut g = Graph::new();
                let x = g.input(a.clone()).unwrap();
                let y = g.matmul(x, x).unwrap();
                let s = g.mean(y).unwrap();
                g.backward(s).unwrap()
            })
        });
    }
    group.finish();
}

fn toy_model(variant: Variant, mode: Mode) -> (TrainConfig, DiffusionModel<f32>) {
    let cfg = TrainConfig::toy(VariantConfig::new(variant, mode));
    let model = DiffusionModel::init(&cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    (cfg, model)
}

fn diffusion_step(c: &mut Criterion) {
    let n = 256;
    let latents: Vec<f32> = (0..n * LATENT_NUMEL).map(|i| (i as f32 * 0.37).sin()).collect();
    let labels: Vec<HolisticLabel> = HolisticLabel::grid().into_iter().cycle().take(n).collect();
    let data = TrainSet::new(&latents, &labels).unwrap();
    let schedule = NoiseSchedule::default();
    let mut group = c.benchmark_group("train_step_toy");
    group.sample_size(10);
    for (v, m) in [(Variant::Exp, Mode::Latent), (Variant::Exp, Mode::Semantic), (Variant::Sc, Mode::Latent)] {
        let (cfg, mut model) = toy_model(v, m);
        let opt = AdamW::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        group.bench_function(format!("{v}-{m}"), |b| {
            b.iter(|| {
                let batch = sample_batch(data, &cfg, &schedule, &mut rng).unwrap();
                train_step(&mut model, &opt, &batch, 1).unwrap()
            })
        });
    }
    group.finish();
}

fn predict(c: &mut Criterion) {
    let (_, model) = toy_model(Variant::Exp, Mode::Latent);
    let label = HolisticLabel::grid()[5];
    let conds = vec![model.holistic_condition(label).unwrap(); 64];
    let z = Tensor::<f32>::from_f64(&[64, 16, 16], &(0..64 * 256).map(|i| (i as f64 * 0.1).cos()).collect::<Vec<_>>()).unwrap();
    let mut group = c.benchmark_group("reverse_step");
    group.sample_size(10);
    group.bench_function("exp-latent-64-chains", |b| b.iter(|| model.predict(&z, &[500; 64], &conds).unwrap()));
    group.finish();
}

fn fid_bench(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let a = gaussian_features(1000, &[0.0; 32], 1.0, &mut rng);
    let b = gaussian_features(1000, &[0.5; 32], 1.0, &mut rng);
    c.bench_function("fid_1000x32", |bch| bch.iter(|| fid(&a, &b).unwrap()));
}

criterion_group!(benches, matmul, diffusion_step, predict, fid_bench);
criterion_main!(benches);
