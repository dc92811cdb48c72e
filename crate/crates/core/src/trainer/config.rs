use serde::{Deserialize, Serialize};

use crate::error::{KgeError, Result};

/// Optimization settings. Omitted keys take the published defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    /// Per-epoch multiplicative learning-rate decay.
    pub lr_decay: f64,
    pub label_smoothing: f64,
    /// Epoch budget `Ep`; also the horizon of the β schedule.
    pub epochs: usize,
    pub seed: u64,
    /// Validate every this many epochs; 0 turns validation off.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 512,
            lr: 0.001,
            lr_decay: 0.99,
            label_smoothing: 0.1,
            epochs: 1500,
            seed: 0,
            eval_every: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(KgeError::Config(
                "train.batch_size must be at least 1".into(),
            ));
        }
        if self.epochs == 0 {
            return Err(KgeError::Config("train.epochs must be at least 1".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(KgeError::Config(format!(
                "train.lr must be positive, got {}",
                self.lr
            )));
        }
        if !(self.lr_decay.is_finite() && self.lr_decay > 0.0) {
            return Err(KgeError::Config(format!(
                "train.lr_decay must be positive, got {}",
                self.lr_decay
            )));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(KgeError::Config(format!(
                "train.label_smoothing must lie in [0, 1), got {}",
                self.label_smoothing
            )));
        }
        Ok(())
    }
}
