//! Stage functions over a workspace directory with fixed file names. Each
//! stage reads only what earlier stages wrote and never rewrites its inputs.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::data::{dataset_hash, DataError, Dataset, DatasetConfig, HolisticLabel, Split, MANIFEST_FILE};
use crate::diffusion::{train_diffusion, DiffusionError, DiffusionModel, NoiseSchedule, StepLog, TrainConfig, TrainSet};
use crate::eval::{evaluate, train_evaluator, EvalConfig, EvalError, EvaluatorConfig, EvaluatorModel, MetricReport};
use crate::eval::evaluator::EvaluatorEpoch;
use crate::tensor::checkpoint;
use crate::util::{sha256_hex, JsonLog};
use crate::vae::{normalized_split, train_vae, LatentCodec, VaeConfig, VaeEpoch, VaeError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("missing input {0}")]
    Missing(PathBuf),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Vae(#[from] VaeError),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Checkpoint(#[from] checkpoint::CheckpointError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, PipelineError>;

/// Fails with [`PipelineError::Missing`] unless `path` exists.
pub fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(PipelineError::Missing(path.to_path_buf()))
    }
}

pub fn file_hash(path: &Path) -> Result<String> {
    require(path)?;
    Ok(sha256_hex(&std::fs::read(path)?))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Workspace {
    pub root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn data_dir(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn vae_checkpoint(&self) -> PathBuf {
        self.root.join("vae.ckpt")
    }

    pub fn vae_log(&self) -> PathBuf {
        self.root.join("vae_log.jsonl")
    }

    pub fn evaluator_checkpoint(&self) -> PathBuf {
        self.root.join("evaluator.ckpt")
    }

    pub fn evaluator_log(&self) -> PathBuf {
        self.root.join("evaluator_log.jsonl")
    }

    /// Weights of run `name`; its config sits next to it as `.toml`.
    pub fn diffusion_checkpoint(&self, name: &str) -> PathBuf {
        self.root.join("diffusion").join(format!("{name}.ckpt"))
    }

    pub fn diffusion_log(&self, name: &str) -> PathBuf {
        self.root.join("diffusion").join(format!("{name}_log.jsonl"))
    }

    pub fn load_dataset(&self) -> Result<Dataset> {
        require(&self.data_dir().join(MANIFEST_FILE))?;
        Ok(Dataset::load(&self.data_dir())?)
    }

    pub fn load_codec(&self, data: &Dataset) -> Result<LatentCodec> {
        require(&self.vae_checkpoint())?;
        Ok(LatentCodec::load(&self.vae_checkpoint(), data.normalizer())?)
    }

    pub fn load_evaluator(&self, data: &Dataset) -> Result<EvaluatorModel> {
        require(&self.evaluator_checkpoint())?;
        Ok(EvaluatorModel::load(&self.evaluator_checkpoint(), data.normalizer())?)
    }

    pub fn load_model(&self, path: &Path) -> Result<DiffusionModel<f32>> {
        require(path)?;
        require(&DiffusionModel::config_path(path))?;
        Ok(DiffusionModel::load(path)?)
    }
}

/// Writes the dataset and returns its content hash.
pub fn gen_data(ws: &Workspace, cfg: &DatasetConfig) -> Result<String> {
    let data = Dataset::generate(cfg)?;
    data.write(&ws.data_dir())?;
    Ok(dataset_hash(&ws.data_dir())?)
}

pub fn train_vae_stage(ws: &Workspace, cfg: &VaeConfig) -> Result<Vec<VaeEpoch>> {
    let data = ws.load_dataset()?;
    std::fs::create_dir_all(&ws.root)?;
    let ckpt = ws.vae_checkpoint();
    let trained = train_vae(&data, cfg, Some(&ws.vae_log()), Some(&ckpt))?;
    checkpoint::save(&trained.store, &ckpt)?;
    Ok(trained.log)
}

pub fn train_evaluator_stage(ws: &Workspace, cfg: &EvaluatorConfig) -> Result<Vec<EvaluatorEpoch>> {
    let data = ws.load_dataset()?;
    let (model, log) = train_evaluator(&data, cfg, Some(&ws.evaluator_log()))?;
    model.save(&ws.evaluator_checkpoint())?;
    Ok(log)
}

/// Standardised latents and labels of the train split.
pub fn train_latents(data: &Dataset, codec: &LatentCodec) -> Result<(Vec<f32>, Vec<HolisticLabel>)> {
    let latents = codec.encode(&normalized_split(data, Split::Train))?;
    let labels = data.split(Split::Train).map(|s| s.label).collect();
    Ok((latents, labels))
}

pub fn train_diffusion_stage(ws: &Workspace, cfg: &TrainConfig, name: &str) -> Result<(DiffusionModel<f32>, Vec<StepLog>)> {
    let data = ws.load_dataset()?;
    let codec = ws.load_codec(&data)?;
    let (latents, labels) = train_latents(&data, &codec)?;
    let ckpt = ws.diffusion_checkpoint(name);
    std::fs::create_dir_all(ckpt.parent().expect("checkpoint has a parent"))?;
    let mut log = JsonLog::create(Some(&ws.diffusion_log(name)))?;
    let (model, history) = train_diffusion(TrainSet::new(&latents, &labels)?, cfg, &NoiseSchedule::default(), &mut log, |_, _| Ok(()))?;
    model.save(&ckpt)?;
    Ok((model, history))
}

pub fn eval_stage(ws: &Workspace, model_path: &Path, cfg: &EvalConfig) -> Result<MetricReport> {
    let data = ws.load_dataset()?;
    let codec = ws.load_codec(&data)?;
    let ev = ws.load_evaluator(&data)?;
    let model = ws.load_model(model_path)?;
    Ok(evaluate(&model, &codec, &ev, &data, &NoiseSchedule::default(), cfg)?)
}
