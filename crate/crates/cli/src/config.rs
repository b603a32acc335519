//! Run configuration: defaults, then the optional TOML file, then flags.

use std::path::Path;

use motion_energy::data::DatasetConfig;
use motion_energy::diffusion::TrainConfig;
use motion_energy::eval::{EvalConfig, EvaluatorConfig};
use motion_energy::vae::VaeConfig;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::CliError;

const SECTIONS: [&str; 5] = ["data", "vae", "evaluator", "diffusion", "eval"];

/// Parsed config file. Each section patches the defaults of one stage.
#[derive(Debug, Default)]
pub struct ConfigFile {
    table: toml::Table,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else { return Ok(Self::default()) };
        if !path.exists() {
            return Err(CliError::Missing(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Failed(format!("{}: {e}", path.display())))?;
        let table: toml::Table = text.parse().map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        for key in table.keys() {
            if !SECTIONS.contains(&key.as_str()) {
                return Err(CliError::Usage(format!("unknown config section [{key}], expected one of {SECTIONS:?}")));
            }
        }
        Ok(Self { table })
    }

    fn section<T: Serialize + DeserializeOwned>(&self, name: &str, base: T) -> Result<T, CliError> {
        let Some(patch) = self.table.get(name) else { return Ok(base) };
        let toml::Value::Table(patch) = patch else {
            return Err(CliError::Usage(format!("config section [{name}] must be a table")));
        };
        let mut merged = toml::Table::try_from(&base).map_err(|e| CliError::Failed(e.to_string()))?;
        merge(&mut merged, patch.clone());
        merged.try_into().map_err(|e: toml::de::Error| CliError::Usage(format!("[{name}]: {e}")))
    }

    pub fn data(&self) -> Result<DatasetConfig, CliError> {
        self.section("data", DatasetConfig::default())
    }

    pub fn vae(&self) -> Result<VaeConfig, CliError> {
        self.section("vae", VaeConfig::default())
    }

    pub fn evaluator(&self) -> Result<EvaluatorConfig, CliError> {
        self.section("evaluator", EvaluatorConfig::default())
    }

    /// `base` is the toy or full-scale preset for the chosen variant.
    pub fn diffusion(&self, base: TrainConfig) -> Result<TrainConfig, CliError> {
        self.section("diffusion", base)
    }

    pub fn eval(&self) -> Result<EvalConfig, CliError> {
        self.section("eval", EvalConfig::default())
    }

    /// `[diffusion.variant]` string field `key`, read before the preset is chosen.
    pub fn variant_field(&self, key: &str) -> Option<String> {
        self.table.get("diffusion")?.get("variant")?.get(key)?.as_str().map(str::to_owned)
    }
}

fn merge(base: &mut toml::Table, patch: toml::Table) {
    for (k, v) in patch {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(p)) => merge(b, p),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
