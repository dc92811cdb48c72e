use serde::{Deserialize, Serialize};

use super::registry::Registry;
use crate::error::{KgeError, Result};

/// Scoring-model hyperparameters. `d_r` and `batchnorm` may be left out;
/// [`ModelConfig::resolve`] fills them from `d_e` and the model's default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub kind: String,
    pub d_e: usize,
    pub d_r: Option<usize>,
    pub k_l: usize,
    pub dropout1: f64,
    pub dropout2: f64,
    pub dropout3: f64,
    pub batchnorm: Option<bool>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: "distmult".into(),
            d_e: 100,
            d_r: None,
            k_l: 30,
            dropout1: 0.3,
            dropout2: 0.2,
            dropout3: 0.3,
            batchnorm: None,
        }
    }
}

impl ModelConfig {
    pub fn new(kind: &str, d_e: usize) -> Self {
        Self {
            kind: kind.to_string(),
            d_e,
            ..Self::default()
        }
    }

    /// Bare scorer: no dropout, no batchnorm.
    pub fn plain(kind: &str, d_e: usize) -> Self {
        Self {
            kind: kind.to_string(),
            d_e,
            dropout1: 0.0,
            dropout2: 0.0,
            dropout3: 0.0,
            batchnorm: Some(false),
            ..Self::default()
        }
    }

    pub fn d_r(&self) -> usize {
        self.d_r.unwrap_or(self.d_e)
    }

    pub fn batchnorm_enabled(&self) -> bool {
        self.batchnorm.unwrap_or(false)
    }

    /// Normalizes the kind name, fills defaults and checks the model's
    /// shape constraints.
    pub fn resolve(&mut self, registry: &Registry) -> Result<()> {
        self.kind = self.kind.to_ascii_lowercase();
        let factory = registry.get(&self.kind)?;
        if self.d_r.is_none() {
            self.d_r = Some(self.d_e);
        }
        if self.batchnorm.is_none() {
            self.batchnorm = Some(factory.default_batchnorm());
        }
        for (name, rate) in [
            ("dropout1", self.dropout1),
            ("dropout2", self.dropout2),
            ("dropout3", self.dropout3),
        ] {
            if !(0.0..1.0).contains(&rate) {
                return Err(KgeError::Config(format!(
                    "{name} must lie in [0, 1), got {rate}"
                )));
            }
        }
        if self.d_e == 0 {
            return Err(KgeError::Config("d_e must be at least 1".into()));
        }
        factory.validate(self)
    }
}
