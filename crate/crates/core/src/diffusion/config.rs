use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{DiffusionError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Exp,
    Oss,
    Sc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Aggregate whole-denoiser predictions over the concepts.
    #[serde(alias = "latent-aware")]
    Latent,
    /// Aggregate cross-attention branches inside one denoiser pass.
    #[serde(alias = "semantic-aware")]
    Semantic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    Mean,
    Sum,
}

macro_rules! str_enum {
    ($ty:ident { $($v:ident => $s:literal $(| $alt:literal)*),+ }) => {
        impl FromStr for $ty {
            type Err = DiffusionError;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($s $(| $alt)* => Ok($ty::$v),)+
                    _ => Err(DiffusionError::Config(format!(
                        concat!("unknown ", stringify!($ty), " '{}', expected one of: ", $($s, " "),+), s
                    ))),
                }
            }
        }
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($ty::$v => $s,)+ })
            }
        }
    };
}

str_enum!(Variant { Exp => "exp", Oss => "oss", Sc => "sc" });
str_enum!(Mode { Latent => "latent" | "latent-aware", Semantic => "semantic" | "semantic-aware" });
str_enum!(Aggregation { Mean => "mean", Sum => "sum" });

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VariantConfig {
    pub variant: Variant,
    pub mode: Mode,
    pub k: usize,
    /// Exp only: probability that a sample trains on its duplicated holistic text.
    pub tau: f64,
    pub alpha_o: f64,
    pub alpha_sc: f64,
    pub aggregation: Aggregation,
}

impl VariantConfig {
    pub fn new(variant: Variant, mode: Mode) -> Self {
        Self {
            variant,
            mode,
            k: 2,
            tau: 0.7,
            alpha_o: default_alpha_o(mode),
            alpha_sc: 1.0,
            aggregation: Aggregation::Mean,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DiffusionError::Config(m));
        if !(0.0..=1.0).contains(&self.tau) {
            return bad(format!("tau must lie in [0, 1], got {}", self.tau));
        }
        if !(self.alpha_o >= 0.0 && self.alpha_sc >= 0.0) {
            return bad(format!("alpha_o and alpha_sc must be >= 0, got {} and {}", self.alpha_o, self.alpha_sc));
        }
        if self.k == 0 || !crate::text::TEXT_DIM.is_multiple_of(self.k) {
            return bad(format!("k={} must divide the text width {}", self.k, crate::text::TEXT_DIM));
        }
        // C^P always holds one path and one gesture concept
        if self.variant != Variant::Oss && self.k != 2 {
            return bad(format!("{} requires k = 2, got {}", self.variant, self.k));
        }
        Ok(())
    }
}

fn default_alpha_o(mode: Mode) -> f64 {
    match mode {
        Mode::Latent => 2.0,
        Mode::Semantic => 1.0,
    }
}

impl Default for VariantConfig {
    fn default() -> Self {
        Self::new(Variant::Exp, Mode::Latent)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenoiserConfig {
    pub blocks: usize,
    pub width: usize,
    pub heads: usize,
    pub time_dim: usize,
    pub ff_mult: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            blocks: 5,
            width: 256,
            heads: 4,
            time_dim: 256,
            ff_mult: 4,
        }
    }
}

impl DenoiserConfig {
    /// Narrow variant sized for single-core training runs.
    pub fn toy() -> Self {
        Self {
            width: 64,
            time_dim: 64,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks == 0 || self.heads == 0 || !self.width.is_multiple_of(self.heads) || !self.time_dim.is_multiple_of(2) || self.time_dim == 0 || self.ff_mult == 0 {
            return Err(DiffusionError::Config(format!("invalid denoiser config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_final: f64,
    /// Step after which `lr_final` replaces `lr`.
    pub lr_decay_step: usize,
    pub seed: u64,
    pub log_every: usize,
    pub denoiser: DenoiserConfig,
    pub variant: VariantConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 100_000,
            batch_size: 64,
            lr: 2e-4,
            lr_final: 2e-5,
            lr_decay_step: 50_000,
            seed: 0,
            log_every: 50,
            denoiser: DenoiserConfig::default(),
            variant: VariantConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Single-core budget used by the CLI defaults and the acceptance runs.
    pub fn toy(variant: VariantConfig) -> Self {
        Self {
            steps: 6000,
            batch_size: 32,
            lr: 1e-3,
            lr_final: 1e-4,
            lr_decay_step: 4800,
            denoiser: DenoiserConfig::toy(),
            variant,
            ..Self::default()
        }
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        if step > self.lr_decay_step {
            self.lr_final
        } else {
            self.lr
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch_size == 0 || !(self.lr > 0.0 && self.lr_final > 0.0) {
            return Err(DiffusionError::Config(format!(
                "steps, batch_size, lr and lr_final must be positive, got {} {} {} {}",
                self.steps, self.batch_size, self.lr, self.lr_final
            )));
        }
        self.denoiser.validate()?;
        self.variant.validate()
    }

    /// TOML with top-level training keys and optional `[denoiser]` and
    /// `[variant]` tables. Missing keys take the values of `base`.
    pub fn from_toml(text: &str, base: &TrainConfig) -> Result<Self> {
        let patch: toml::Table = text.parse().map_err(|e: toml::de::Error| DiffusionError::Config(e.to_string()))?;
        let mut merged = toml::Table::try_from(base).map_err(|e| DiffusionError::Config(e.to_string()))?;
        merge(&mut merged, patch);
        let cfg: TrainConfig = merged.try_into().map_err(|e: toml::de::Error| DiffusionError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, base: &TrainConfig) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| DiffusionError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text, base)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
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

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alpha_o_follows_mode() {
        assert_eq!(VariantConfig::new(Variant::Oss, Mode::Latent).alpha_o, 2.0);
        assert_eq!(VariantConfig::new(Variant::Oss, Mode::Semantic).alpha_o, 1.0);
        let v = VariantConfig::default();
        assert_eq!((v.k, v.tau, v.alpha_sc, v.aggregation), (2, 0.7, 1.0, Aggregation::Mean));
    }

    #[test]
    fn validation() {
        let mut v = VariantConfig::default();
        v.tau = 1.5;
        assert!(v.validate().is_err());
        let mut v = VariantConfig::default();
        v.alpha_o = -1.0;
        assert!(v.validate().is_err());
        let mut v = VariantConfig::new(Variant::Sc, Mode::Latent);
        v.k = 4;
        assert!(v.validate().is_err());
        let mut v = VariantConfig::new(Variant::Oss, Mode::Latent);
        v.k = 4;
        assert!(v.validate().is_ok());
        v.k = 3;
        assert!(v.validate().is_err());
    }

    #[test]
    fn toml_overrides_base() {
        let base = TrainConfig::toy(VariantConfig::default());
        let cfg = TrainConfig::from_toml(
            "steps = 10\n[variant]\nvariant = \"sc\"\nmode = \"semantic\"\nalpha_o = 0.5\n[denoiser]\nblocks = 2\n",
            &base,
        )
        .unwrap();
        assert_eq!(cfg.steps, 10);
        assert_eq!(cfg.variant.variant, Variant::Sc);
        assert_eq!(cfg.variant.mode, Mode::Semantic);
        assert_eq!(cfg.variant.alpha_o, 0.5);
        assert_eq!(cfg.denoiser.blocks, 2);
        assert_eq!(cfg.denoiser.width, 64);
        assert_eq!(cfg.batch_size, base.batch_size);
        assert!(TrainConfig::from_toml("stepz = 1", &base).is_err());
        assert!(TrainConfig::from_toml("[variant]\ntau = 2.0", &base).is_err());
        assert_eq!(TrainConfig::from_toml(&cfg.to_toml(), &base).unwrap(), cfg);
    }

    #[test]
    fn names_round_trip() {
        for v in [Variant::Exp, Variant::Oss, Variant::Sc] {
            assert_eq!(v.to_string().parse::<Variant>().unwrap(), v);
        }
        assert_eq!("semantic-aware".parse::<Mode>().unwrap(), Mode::Semantic);
        assert!("foo".parse::<Aggregation>().is_err());
    }

    #[test]
    fn lr_schedule() {
        let c = TrainConfig::default();
        assert_eq!(c.lr_at(1), 2e-4);
        assert_eq!(c.lr_at(50_000), 2e-4);
        assert_eq!(c.lr_at(50_001), 2e-5);
    }
}
