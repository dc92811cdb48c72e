use super::config::ModelConfig;
use super::registry::{Interaction, InteractionFactory};
use crate::error::{KgeError, Result};
use crate::numkernel::{ParamStore, RngState, Tape, Var};

/// Complex Hadamard product `ĥ ⊙ r̂` on split-half embeddings. Contracting
/// its real and imaginary blocks with the entity table gives
/// `Re(⟨ĥ, r̂, conj(t̂)⟩)`.
pub struct ComplEx;

impl Interaction for ComplEx {
    fn name(&self) -> &'static str {
        "complex"
    }

    fn interact(&self, tape: &mut Tape<'_>, heads: Var, relations: Var) -> Result<Var> {
        tape.complex_mul(heads, relations)
    }
}

pub struct ComplExFactory;

impl InteractionFactory for ComplExFactory {
    fn name(&self) -> &'static str {
        "complex"
    }

    fn validate(&self, config: &ModelConfig) -> Result<()> {
        if !config.d_e.is_multiple_of(2) {
            return Err(KgeError::Config(format!(
                "complex needs an even d_e, got {}",
                config.d_e
            )));
        }
        if config.d_r() != config.d_e {
            return Err(KgeError::Config(format!(
                "complex needs d_r == d_e, got d_r={} d_e={}",
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
        Ok(Box::new(ComplEx))
    }
}
