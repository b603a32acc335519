//! `motion-energy`: data generation, training, sampling, evaluation and
//! figure export over one output directory.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error, 3 missing input.
//! Failures print a single `error: <kind>: <message>` line on stderr.

mod config;
mod export;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use motion_energy::data::io::{read_motions, write_motions};
use motion_energy::data::{oracle_classify, Concept, Family, HolisticLabel, MotionSequence};
use motion_energy::diffusion::{
    sample_decomposed, sample_holistic, Aggregation, DiffusionModel, Mode, NoiseSchedule, TrainConfig, Variant, VariantConfig,
};
use motion_energy::pipeline::{self, PipelineError, Workspace};
use motion_energy::tensor::Tensor;
use motion_energy::vae::LatentCodec;

use config::ConfigFile;

/// Environment variable naming the default output directory.
pub const OUT_ENV: &str = "MOTION_ENERGY_OUT";
const DEFAULT_MODEL: &str = "exp-latent";

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Missing(PathBuf),
    Failed(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Failed(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Missing(_) => 3,
        }
    }

    fn line(&self) -> String {
        let (kind, msg) = match self {
            CliError::Usage(m) => ("usage", m.clone()),
            CliError::Missing(p) => ("missing", p.display().to_string()),
            CliError::Failed(m) => ("failed", m.clone()),
        };
        format!("error: {kind}: {}", msg.replace(['\n', '\r'], " "))
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Missing(p) => CliError::Missing(p),
            other => CliError::Failed(other.to_string()),
        }
    }
}

fn failed(e: impl std::fmt::Display) -> CliError {
    CliError::Failed(e.to_string())
}

#[derive(Parser, Debug)]
#[command(name = "motion-energy", version, about = "Compositional latent diffusion over synthetic two-concept motions")]
struct Cli {
    /// Workspace directory holding data, checkpoints and outputs.
    #[arg(long, global = true, env = OUT_ENV, default_value = "runs")]
    out: PathBuf,
    /// TOML file with [data], [vae], [evaluator], [diffusion] and [eval]
    /// sections; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for the subcommand's stage; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Debug, Clone)]
struct ModelArgs {
    /// Diffusion run name inside the workspace.
    #[arg(long, default_value = DEFAULT_MODEL, conflicts_with = "checkpoint")]
    model: String,
    /// Explicit diffusion checkpoint; its config is the sibling `.toml`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Reverse steps.
    #[arg(long, default_value_t = motion_energy::diffusion::SAMPLE_STEPS)]
    steps: usize,
    /// Output motion file (DMG1).
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Generate the synthetic dataset and print its hash.
    GenData {
        #[arg(long)]
        n_train: Option<usize>,
        #[arg(long)]
        n_test: Option<usize>,
        #[arg(long)]
        n_held_out: Option<usize>,
    },
    /// Train the motion VAE.
    TrainVae {
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Train the contrastive evaluator.
    TrainEval {
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Train a diffusion model.
    TrainDiffusion {
        #[arg(long)]
        variant: Option<Variant>,
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        aggregation: Option<Aggregation>,
        /// Start from the full-scale preset instead of the single-core one.
        #[arg(long)]
        full_scale: bool,
        /// Run name; defaults to `{variant}-{mode}`.
        #[arg(long)]
        name: Option<String>,
    },
    /// Generate motions for a path,gesture pair.
    Sample {
        #[arg(long)]
        texts: String,
        #[arg(long, default_value_t = 1)]
        n: usize,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// One chain per concept of a path,gesture pair.
    Decompose {
        #[arg(long)]
        texts: String,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Compose two single concepts, possibly never seen together.
    Recombine {
        #[arg(long)]
        concept1: Concept,
        #[arg(long)]
        concept2: Concept,
        #[arg(long, default_value_t = 1)]
        n: usize,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Score a diffusion model and write the metric report.
    Eval {
        /// JSON report path; the text table goes next to it as `.txt`.
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value = DEFAULT_MODEL, conflicts_with = "checkpoint")]
        model: String,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        n_generated: Option<usize>,
        #[arg(long)]
        decomposition_seeds: Option<usize>,
    },
    /// Write per-frame CSV, and SVG figures with --svg, for a motion file.
    Export {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        svg: bool,
        /// Defaults to `<out>/export`.
        #[arg(long)]
        dir: Option<PathBuf>,
    },
}

/// Path and gesture concepts from `a,b` in either order.
fn parse_pair(texts: &str) -> Result<HolisticLabel, CliError> {
    let parts: Vec<&str> = texts.split(',').map(str::trim).collect();
    let [a, b] = parts[..] else {
        return Err(CliError::Usage(format!("--texts expects two comma-separated concepts, got `{texts}`")));
    };
    let (a, b): (Concept, Concept) = (a.parse().map_err(usage)?, b.parse().map_err(usage)?);
    let (p, g) = if a.family() == Family::Path { (a, b) } else { (b, a) };
    HolisticLabel::new(p, g).map_err(usage)
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

struct Loaded {
    model: DiffusionModel<f32>,
    codec: LatentCodec,
}

fn load(ws: &Workspace, m: &ModelArgs) -> Result<Loaded, CliError> {
    let path = m.checkpoint.clone().unwrap_or_else(|| ws.diffusion_checkpoint(&m.model));
    pipeline::require(&path)?;
    let data = ws.load_dataset()?;
    let codec = ws.load_codec(&data)?;
    let model = ws.load_model(&path)?;
    Ok(Loaded { model, codec })
}

fn output_path(ws: &Workspace, m: &ModelArgs, stem: &str) -> PathBuf {
    m.output.clone().unwrap_or_else(|| ws.root.join("samples").join(format!("{stem}.dmg1")))
}

fn save_motions(path: &Path, motions: &[MotionSequence]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(failed)?;
    }
    write_motions(path, motions).map_err(failed)?;
    println!("wrote {} motion(s) to {}", motions.len(), path.display());
    Ok(())
}

fn report_labels(motions: &[MotionSequence]) {
    for (i, m) in motions.iter().enumerate() {
        println!("motion {i}: oracle {}", oracle_classify(m));
    }
}

/// Chain seeds for a run seeded with `seed`.
fn chain_seeds(seed: u64, n: usize) -> Vec<u64> {
    (0..n as u64).map(|i| (seed << 16) + i).collect()
}

fn run(cli: Cli) -> Result<(), CliError> {
    let file = ConfigFile::load(cli.config.as_deref())?;
    let ws = Workspace::new(&cli.out);
    let seed = cli.seed;
    match cli.cmd {
        Cmd::GenData { n_train, n_test, n_held_out } => {
            let mut cfg = file.data()?;
            cfg.n_train = n_train.unwrap_or(cfg.n_train);
            cfg.n_test = n_test.unwrap_or(cfg.n_test);
            cfg.n_held_out = n_held_out.unwrap_or(cfg.n_held_out);
            cfg.seed = seed.unwrap_or(cfg.seed);
            let hash = pipeline::gen_data(&ws, &cfg)?;
            println!("dataset {} sha256 {hash}", ws.data_dir().display());
        }
        Cmd::TrainVae { epochs } => {
            let mut cfg = file.vae()?;
            cfg.epochs = epochs.unwrap_or(cfg.epochs);
            cfg.seed = seed.unwrap_or(cfg.seed);
            pipeline::require(&ws.data_dir())?;
            let log = pipeline::train_vae_stage(&ws, &cfg)?;
            if let Some(last) = log.last() {
                println!("vae epoch {}: recon {:.5} kl {:.4}", last.epoch, last.recon, last.kl);
            }
            println!("checkpoint {} sha256 {}", ws.vae_checkpoint().display(), pipeline::file_hash(&ws.vae_checkpoint())?);
        }
        Cmd::TrainEval { epochs } => {
            let mut cfg = file.evaluator()?;
            cfg.epochs = epochs.unwrap_or(cfg.epochs);
            cfg.seed = seed.unwrap_or(cfg.seed);
            pipeline::require(&ws.data_dir())?;
            let log = pipeline::train_evaluator_stage(&ws, &cfg)?;
            if let Some(last) = log.last() {
                println!("evaluator epoch {}: loss {:.4}", last.epoch, last.loss);
            }
            let p = ws.evaluator_checkpoint();
            println!("checkpoint {} sha256 {}", p.display(), pipeline::file_hash(&p)?);
        }
        Cmd::TrainDiffusion {
            variant,
            mode,
            steps,
            batch_size,
            k,
            tau,
            aggregation,
            full_scale,
            name,
        } => {
            let from_file = |key: &str| file.variant_field(key);
            let variant = match variant {
                Some(v) => v,
                None => from_file("variant").map(|s| s.parse()).transpose().map_err(usage)?.unwrap_or(Variant::Exp),
            };
            let mode = match mode {
                Some(m) => m,
                None => from_file("mode").map(|s| s.parse()).transpose().map_err(usage)?.unwrap_or(Mode::Latent),
            };
            let vc = VariantConfig::new(variant, mode);
            let preset = if full_scale {
                TrainConfig { variant: vc, ..TrainConfig::default() }
            } else {
                TrainConfig::toy(vc)
            };
            let mut cfg = file.diffusion(preset)?;
            cfg.variant.variant = variant;
            cfg.variant.mode = mode;
            if let Some(s) = steps {
                cfg.steps = s;
                if s <= cfg.lr_decay_step {
                    cfg.lr_decay_step = s * 4 / 5;
                }
            }
            cfg.batch_size = batch_size.unwrap_or(cfg.batch_size);
            cfg.variant.k = k.unwrap_or(cfg.variant.k);
            cfg.variant.tau = tau.unwrap_or(cfg.variant.tau);
            cfg.variant.aggregation = aggregation.unwrap_or(cfg.variant.aggregation);
            cfg.seed = seed.unwrap_or(cfg.seed);
            cfg.validate().map_err(usage)?;
            pipeline::require(&ws.data_dir())?;
            pipeline::require(&ws.vae_checkpoint())?;
            let name = name.unwrap_or_else(|| format!("{variant}-{mode}"));
            let (_, history) = pipeline::train_diffusion_stage(&ws, &cfg, &name)?;
            if let Some(last) = history.last() {
                println!("step {}: mse {:.4} total {:.4}", last.step, last.mse, last.total);
            }
            let p = ws.diffusion_checkpoint(&name);
            println!("checkpoint {} sha256 {}", p.display(), pipeline::file_hash(&p)?);
        }
        Cmd::Sample { texts, n, model } => {
            let label = parse_pair(&texts)?;
            let l = load(&ws, &model)?;
            let cond = l.model.holistic_condition(label).map_err(failed)?;
            let seed = seed.unwrap_or(0);
            let out = sample_holistic(&l.model, &l.codec, &NoiseSchedule::default(), &cond, model.steps, &chain_seeds(seed, n))
                .map_err(failed)?;
            report_labels(&out);
            save_motions(&output_path(&ws, &model, &format!("sample-{}-{}-seed{seed}", label.path, label.gesture)), &out)?;
        }
        Cmd::Decompose { texts, model } => {
            let label = parse_pair(&texts)?;
            let l = load(&ws, &model)?;
            let cond = l.model.decomposed_condition(label).map_err(failed)?;
            let seed = seed.unwrap_or(0);
            let out = sample_decomposed(&l.model, &l.codec, &NoiseSchedule::default(), &cond, model.steps, &chain_seeds(seed, cond.len()))
                .map_err(failed)?;
            report_labels(&out);
            save_motions(&output_path(&ws, &model, &format!("decompose-{}-{}-seed{seed}", label.path, label.gesture)), &out)?;
        }
        Cmd::Recombine { concept1, concept2, n, model } => {
            let l = load(&ws, &model)?;
            let cond: Vec<Tensor<f32>> = [concept1, concept2]
                .iter()
                .map(|&c| l.model.concept_condition(c))
                .collect::<Result<_, _>>()
                .map_err(failed)?;
            let seed = seed.unwrap_or(0);
            let out =
                sample_holistic(&l.model, &l.codec, &NoiseSchedule::default(), &cond, model.steps, &chain_seeds(seed, n)).map_err(failed)?;
            report_labels(&out);
            save_motions(&output_path(&ws, &model, &format!("recombine-{concept1}-{concept2}-seed{seed}")), &out)?;
        }
        Cmd::Eval {
            report,
            model,
            checkpoint,
            steps,
            n_generated,
            decomposition_seeds,
        } => {
            let mut cfg = file.eval()?;
            cfg.steps = steps.unwrap_or(cfg.steps);
            cfg.n_generated = n_generated.unwrap_or(cfg.n_generated);
            cfg.decomposition_seeds = decomposition_seeds.unwrap_or(cfg.decomposition_seeds);
            cfg.seed = seed.unwrap_or(cfg.seed);
            let path = checkpoint.unwrap_or_else(|| ws.diffusion_checkpoint(&model));
            pipeline::require(&path)?;
            pipeline::require(&ws.evaluator_checkpoint())?;
            let r = pipeline::eval_stage(&ws, &path, &cfg)?;
            if let Some(dir) = report.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(failed)?;
            }
            std::fs::write(&report, r.to_json()).map_err(failed)?;
            let table = r.to_table();
            std::fs::write(report.with_extension("txt"), &table).map_err(failed)?;
            print!("{table}");
        }
        Cmd::Export { input, svg, dir } => {
            pipeline::require(&input)?;
            let motions = read_motions(&input).map_err(failed)?;
            let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("motion").to_owned();
            let dir = dir.unwrap_or_else(|| ws.root.join("export"));
            for p in export::export(&motions, &stem, &dir, svg).map_err(CliError::Failed)? {
                println!("wrote {}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.line());
            ExitCode::from(e.code())
        }
    }
}
