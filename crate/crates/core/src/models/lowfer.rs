use super::config::ModelConfig;
use super::registry::{Interaction, InteractionFactory};
use crate::error::{KgeError, Result};
use crate::numkernel::{ParamId, ParamStore, RngState, Tape, Tensor, Var};

pub const U_PARAM: &str = "lowfer.u";
pub const V_PARAM: &str = "lowfer.v";
pub const FACTOR_INIT_BOUND: f64 = 0.1;

/// Factorized bilinear pooling: `(h·U) ⊙ (r·V)` sum-pooled over windows of
/// `k_l` consecutive columns back down to `d_e`.
pub struct Lowfer {
    u: ParamId,
    v: ParamId,
    rank: usize,
}

impl Interaction for Lowfer {
    fn name(&self) -> &'static str {
        "lowfer"
    }

    fn interact(&self, tape: &mut Tape<'_>, heads: Var, relations: Var) -> Result<Var> {
        let u = tape.param(self.u);
        let v = tape.param(self.v);
        let hu = tape.matmul(heads, u)?;
        let rv = tape.matmul(relations, v)?;
        let g = tape.mul(hu, rv)?;
        tape.sum_pool(g, self.rank)
    }
}

pub struct LowferFactory;

impl InteractionFactory for LowferFactory {
    fn name(&self) -> &'static str {
        "lowfer"
    }

    fn default_batchnorm(&self) -> bool {
        true
    }

    fn validate(&self, config: &ModelConfig) -> Result<()> {
        if config.k_l == 0 {
            return Err(KgeError::Config("lowfer needs k_l >= 1".into()));
        }
        Ok(())
    }

    fn interaction_parameters(&self, config: &ModelConfig) -> usize {
        (config.d_e + config.d_r()) * config.k_l * config.d_e
    }

    fn build(
        &self,
        config: &ModelConfig,
        store: &mut ParamStore,
        rng: &mut RngState,
    ) -> Result<Box<dyn Interaction>> {
        let (d_e, d_r, k) = (config.d_e, config.d_r(), config.k_l);
        let mut init = |rows: usize| {
            let mut t = Tensor::zeros(&[rows, k * d_e]);
            for w in t.data_mut() {
                *w = rng.uniform_range(-FACTOR_INIT_BOUND, FACTOR_INIT_BOUND);
            }
            t
        };
        let u = init(d_e);
        let v = init(d_r);
        let u = store.insert(U_PARAM, u, true)?;
        let v = store.insert(V_PARAM, v, true)?;
        Ok(Box::new(Lowfer { u, v, rank: k }))
    }
}
