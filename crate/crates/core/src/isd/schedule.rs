use serde::{Deserialize, Serialize};

use crate::error::{KgeError, Result};

/// Linear decay `β_ep = β_Ep · (1 - ep / Ep)`, clamped to `[0, 1]`.
pub fn beta_at_epoch(epoch: usize, total_epochs: usize, beta_init: f64) -> Result<f64> {
    if total_epochs == 0 {
        return Err(KgeError::Parameter(
            "total epochs must be at least 1".into(),
        ));
    }
    if epoch > total_epochs {
        return Err(KgeError::Parameter(format!(
            "epoch {epoch} is past the schedule end {total_epochs}"
        )));
    }
    let beta = beta_init * (1.0 - epoch as f64 / total_epochs as f64);
    Ok(beta.clamp(0.0, 1.0))
}

/// Distillation settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistillConfig {
    pub enabled: bool,
    /// Temperature exponent `m`, `T = 10^m`.
    pub m_exponent: f64,
    /// Block projection width; defaults to `d_e`.
    pub k_b: Option<usize>,
    pub beta_init: f64,
    /// Ablation: the teacher always sees the first batch of the epoch.
    pub static_input: bool,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            m_exponent: 5.0,
            k_b: None,
            beta_init: 1.0,
            static_input: false,
        }
    }
}

impl DistillConfig {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }

    pub fn temperature(&self) -> f64 {
        10f64.powf(self.m_exponent)
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.temperature();
        if !(t > 0.0 && t.is_finite()) {
            return Err(KgeError::Config(format!(
                "temperature 10^{} is not a positive finite number",
                self.m_exponent
            )));
        }
        if !(0.0..=1.0).contains(&self.beta_init) {
            return Err(KgeError::Config(format!(
                "beta_init must lie in [0, 1], got {}",
                self.beta_init
            )));
        }
        if self.k_b == Some(0) {
            return Err(KgeError::Config("k_b must be at least 1".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_and_midpoint() {
        assert_eq!(beta_at_epoch(0, 1500, 1.0).unwrap(), 1.0);
        assert_eq!(beta_at_epoch(1500, 1500, 1.0).unwrap(), 0.0);
        assert_eq!(beta_at_epoch(750, 1500, 1.0).unwrap(), 0.5);
        assert!(beta_at_epoch(1501, 1500, 1.0).is_err());
    }

    #[test]
    fn non_increasing() {
        let betas: Vec<f64> = (0..=37)
            .map(|e| beta_at_epoch(e, 37, 0.8).unwrap())
            .collect();
        assert!(betas.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(betas[0], 0.8);
        assert_eq!(betas[37], 0.0);
    }

    #[test]
    fn temperature_from_exponent() {
        assert_eq!(DistillConfig::default().temperature(), 1e5);
    }
}
