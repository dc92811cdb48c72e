use super::config::ModelConfig;
use super::registry::{Interaction, InteractionFactory};
use crate::error::Result;
use crate::numkernel::{ParamId, ParamStore, RngState, Tape, Tensor, Var};

pub const CORE_PARAM: &str = "tucker.core";
pub const CORE_INIT_BOUND: f64 = 0.1;

/// Core-tensor interaction `z_c = Σ_{a,b} W[a,b,c]·h_a·r_b`.
pub struct Tucker {
    core: ParamId,
    d_e: usize,
    d_r: usize,
}

impl Interaction for Tucker {
    fn name(&self) -> &'static str {
        "tucker"
    }

    fn interact(&self, tape: &mut Tape<'_>, heads: Var, relations: Var) -> Result<Var> {
        let core = tape.param(self.core);
        let w = tape.reshape(core, &[self.d_e, self.d_r * self.d_e])?;
        let hw = tape.matmul(heads, w)?;
        tape.batched_vec_mat(relations, hw, self.d_e)
    }
}

pub struct TuckerFactory;

impl InteractionFactory for TuckerFactory {
    fn name(&self) -> &'static str {
        "tucker"
    }

    fn default_batchnorm(&self) -> bool {
        true
    }

    fn interaction_parameters(&self, config: &ModelConfig) -> usize {
        config.d_e * config.d_r() * config.d_e
    }

    fn build(
        &self,
        config: &ModelConfig,
        store: &mut ParamStore,
        rng: &mut RngState,
    ) -> Result<Box<dyn Interaction>> {
        let (d_e, d_r) = (config.d_e, config.d_r());
        let mut core = Tensor::zeros(&[d_e, d_r, d_e]);
        for w in core.data_mut() {
            *w = rng.uniform_range(-CORE_INIT_BOUND, CORE_INIT_BOUND);
        }
        let core = store.insert(CORE_PARAM, core, true)?;
        Ok(Box::new(Tucker { core, d_e, d_r }))
    }
}
