use super::config::ModelConfig;
use super::registry::{Interaction, Registry};
use crate::error::{KgeError, Result};
use crate::numkernel::tape::apply_pending;
use crate::numkernel::{dropout_mask, ParamId, ParamStore, RngState, Tape, Tensor, Var};

pub const ENTITY_PARAM: &str = "entity";
pub const RELATION_PARAM: &str = "relation";
pub const EMBEDDING_INIT_STD: f64 = 0.05;

#[derive(Clone, Copy, Debug)]
struct BatchNormIds {
    gamma: ParamId,
    beta: ParamId,
    mean: ParamId,
    var: ParamId,
}

impl BatchNormIds {
    fn insert(store: &mut ParamStore, prefix: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.insert(&format!("{prefix}.gamma"), Tensor::full(&[dim], 1.0), true)?,
            beta: store.insert(&format!("{prefix}.beta"), Tensor::zeros(&[dim]), true)?,
            mean: store.insert(
                &format!("{prefix}.running_mean"),
                Tensor::zeros(&[dim]),
                false,
            )?,
            var: store.insert(
                &format!("{prefix}.running_var"),
                Tensor::full(&[dim], 1.0),
                false,
            )?,
        })
    }

    fn apply(&self, tape: &mut Tape<'_>, x: Var, training: bool) -> Result<Var> {
        tape.batchnorm(x, self.gamma, self.beta, self.mean, self.var, training)
    }
}

/// Embedding tables plus one registered interaction, wired into the 1-N
/// scoring pipeline:
///
/// `h → bn0 → dropout1 → interact(h, r) → dropout2 → bn1 → dropout3 → ·Eᵀ`
pub struct KgeModel {
    config: ModelConfig,
    interaction: Box<dyn Interaction>,
    entity: ParamId,
    relation: ParamId,
    bn0: Option<BatchNormIds>,
    bn1: Option<BatchNormIds>,
    num_entities: usize,
    num_relations: usize,
}

impl KgeModel {
    /// Allocates and initializes every model parameter in `store`.
    /// `num_relations` counts reciprocal relations.
    pub fn new(
        registry: &Registry,
        config: &ModelConfig,
        num_entities: usize,
        num_relations: usize,
        store: &mut ParamStore,
        rng: &mut RngState,
    ) -> Result<Self> {
        let mut config = config.clone();
        config.resolve(registry)?;
        let factory = registry.get(&config.kind)?;
        let (d_e, d_r) = (config.d_e, config.d_r());

        let mut table = |rows: usize, cols: usize| {
            let mut t = Tensor::zeros(&[rows, cols]);
            for x in t.data_mut() {
                *x = rng.normal(0.0, EMBEDDING_INIT_STD);
            }
            t
        };
        let e = table(num_entities, d_e);
        let r = table(num_relations, d_r);
        let entity = store.insert(ENTITY_PARAM, e, true)?;
        let relation = store.insert(RELATION_PARAM, r, true)?;
        let interaction = factory.build(&config, store, rng)?;
        let (bn0, bn1) = if config.batchnorm_enabled() {
            (
                Some(BatchNormIds::insert(store, "bn0", d_e)?),
                Some(BatchNormIds::insert(store, "bn1", d_e)?),
            )
        } else {
            (None, None)
        };
        Ok(Self {
            config,
            interaction,
            entity,
            relation,
            bn0,
            bn1,
            num_entities,
            num_relations,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn kind(&self) -> &'static str {
        self.interaction.name()
    }

    pub fn entity_param(&self) -> ParamId {
        self.entity
    }

    pub fn relation_param(&self) -> ParamId {
        self.relation
    }

    pub fn num_entities(&self) -> usize {
        self.num_entities
    }

    pub fn num_relations(&self) -> usize {
        self.num_relations
    }

    /// Records the forward pass on `tape` and returns the `bs × N_e` logits.
    /// Dropout masks are drawn from `rng` in pipeline order, and only in
    /// training mode.
    pub fn forward(
        &self,
        tape: &mut Tape<'_>,
        heads: &[usize],
        relations: &[usize],
        training: bool,
        rng: &mut RngState,
    ) -> Result<Var> {
        if heads.len() != relations.len() {
            return Err(KgeError::dim("forward", &[heads.len()], &[relations.len()]));
        }
        let e = tape.param(self.entity);
        let r_table = tape.param(self.relation);
        let mut h = tape.gather(e, heads)?;
        let r = tape.gather(r_table, relations)?;

        if let Some(bn) = &self.bn0 {
            h = bn.apply(tape, h, training)?;
        }
        let m = dropout_mask(tape.value(h).shape(), self.config.dropout1, rng, training)?;
        h = tape.mask(h, m)?;

        let mut z = self.interaction.interact(tape, h, r)?;
        let m = dropout_mask(tape.value(z).shape(), self.config.dropout2, rng, training)?;
        z = tape.mask(z, m)?;
        if let Some(bn) = &self.bn1 {
            z = bn.apply(tape, z, training)?;
        }
        let m = dropout_mask(tape.value(z).shape(), self.config.dropout3, rng, training)?;
        z = tape.mask(z, m)?;

        tape.matmul_bt(z, e)
    }

    /// Inference-mode logits; deterministic and rng-free.
    pub fn predict(
        &self,
        store: &ParamStore,
        heads: &[usize],
        relations: &[usize],
    ) -> Result<Tensor> {
        let mut tape = Tape::new(store);
        // inference never draws from the rng
        let mut unused = RngState::new(0);
        let u = self.forward(&mut tape, heads, relations, false, &mut unused)?;
        Ok(tape.value(u).clone())
    }

    /// Training-mode logits without gradients; applies batchnorm running
    /// statistics updates to `store`.
    pub fn predict_training(
        &self,
        store: &mut ParamStore,
        heads: &[usize],
        relations: &[usize],
        rng: &mut RngState,
    ) -> Result<Tensor> {
        let (logits, pending) = {
            let mut tape = Tape::new(store);
            let u = self.forward(&mut tape, heads, relations, true, rng)?;
            (tape.value(u).clone(), tape.take_pending())
        };
        apply_pending(store, pending);
        Ok(logits)
    }
}

/// Shape of the semantic extraction block for parameter counting.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockSize {
    pub k_b: usize,
    pub batch_size: usize,
}

/// Closed-form count of learnable scalars: embedding tables, interaction
/// parameters, batchnorm scale/shift and, when given, the block's
/// `W_C`, `W_K` (`d_e × k_b` each) and `W_P` (`bs × N_e`).
pub fn count_parameters(
    registry: &Registry,
    config: &ModelConfig,
    num_entities: usize,
    num_relations: usize,
    block: Option<BlockSize>,
) -> Result<usize> {
    let mut config = config.clone();
    if config.d_e == 0 {
        // the empty model
        return Ok(0);
    }
    config.resolve(registry)?;
    let factory = registry.get(&config.kind)?;
    let d_e = config.d_e;
    let mut n = num_entities * d_e + num_relations * config.d_r();
    n += factory.interaction_parameters(&config);
    if config.batchnorm_enabled() {
        n += 2 * 2 * d_e;
    }
    if let Some(b) = block {
        n += 2 * d_e * b.k_b + b.batch_size * num_entities;
    }
    Ok(n)
}
