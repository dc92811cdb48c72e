//! The JSON run configuration shared by training, evaluation and the CLI.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{KgeError, Result};
use crate::isd::DistillConfig;
use crate::models::{ModelConfig, Registry};
use crate::trainer::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset_dir: PathBuf,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub isd: DistillConfig,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("output")
}

impl RunConfig {
    pub fn new(dataset_dir: impl Into<PathBuf>, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            dataset_dir: dataset_dir.into(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            isd: DistillConfig::default(),
            output_dir: output_dir.into(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| KgeError::Config(e.to_string()))
    }

    /// Reads a config file. Relative dataset and output paths are taken
    /// relative to the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| KgeError::io(path, e))?;
        let mut cfg = Self::from_json(&text)
            .map_err(|e| KgeError::Config(format!("{}: {}", path.display(), strip(e))))?;
        let base = path.parent().unwrap_or_else(|| Path::new(""));
        if cfg.dataset_dir.is_relative() {
            cfg.dataset_dir = base.join(&cfg.dataset_dir);
        }
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        Ok(cfg)
    }

    /// Fills derived defaults (`d_r`, batchnorm, `k_b`) and validates every
    /// section. Idempotent.
    pub fn resolve(&mut self, registry: &Registry) -> Result<()> {
        self.model.resolve(registry)?;
        self.train.validate()?;
        self.isd.validate()?;
        if self.isd.k_b.is_none() {
            self.isd.k_b = Some(self.model.d_e);
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

fn strip(e: KgeError) -> String {
    match e {
        KgeError::Config(m) => m,
        other => other.to_string(),
    }
}
