use super::config::ModelConfig;
use super::registry::{Interaction, InteractionFactory};
use crate::error::{KgeError, Result};
use crate::numkernel::{ParamStore, RngState, Tape, Var};

/// Diagonal bilinear interaction `h ⊙ r`.
pub struct DistMult;

impl Interaction for DistMult {
    fn name(&self) -> &'static str {
        "distmult"
    }

    fn interact(&self, tape: &mut Tape<'_>, heads: Var, relations: Var) -> Result<Var> {
        tape.mul(heads, relations)
    }
}

pub struct DistMultFactory;

impl InteractionFactory for DistMultFactory {
    fn name(&self) -> &'static str {
        "distmult"
    }

    fn validate(&self, config: &ModelConfig) -> Result<()> {
        if config.d_r() != config.d_e {
            return Err(KgeError::Config(format!(
                "distmult needs d_r == d_e, got d_r={} d_e={}",
                config.d_r(),
                config.d_e
            )));
        }
        Ok(())
    }

    fn interaction_parameters(&self, _config: &ModelConfig) -> usize {
        0
    }

    fn build(
        &self,
        _config: &ModelConfig,
        _store: &mut ParamStore,
        _rng: &mut RngState,
    ) -> Result<Box<dyn Interaction>> {
        Ok(Box::new(DistMult))
    }
}
