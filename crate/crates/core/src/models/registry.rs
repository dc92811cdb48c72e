use indexmap::IndexMap;

use super::config::ModelConfig;
use crate::error::{KgeError, Result};
use crate::numkernel::{ParamStore, RngState, Tape, Var};

/// The relational part of a scorer: turns (normalized, dropped-out) head
/// embeddings and relation embeddings into a `bs × d_e` representation that
/// is then contracted with every entity embedding.
pub trait Interaction: Send + Sync {
    fn name(&self) -> &'static str;

    fn interact(&self, tape: &mut Tape<'_>, heads: Var, relations: Var) -> Result<Var>;
}

/// Builds one [`Interaction`] kind and knows its parameter shapes.
pub trait InteractionFactory: Send + Sync {
    fn name(&self) -> &'static str;

    fn default_batchnorm(&self) -> bool {
        false
    }

    fn validate(&self, _config: &ModelConfig) -> Result<()> {
        Ok(())
    }

    /// Learnable scalars owned by the interaction itself (core tensor,
    /// factors), excluding embedding tables.
    fn interaction_parameters(&self, config: &ModelConfig) -> usize;

    fn build(
        &self,
        config: &ModelConfig,
        store: &mut ParamStore,
        rng: &mut RngState,
    ) -> Result<Box<dyn Interaction>>;
}

/// Name-keyed table of scoring-model factories.
pub struct Registry {
    factories: IndexMap<&'static str, Box<dyn InteractionFactory>>,
}

impl Registry {
    pub fn empty() -> Self {
        Self {
            factories: IndexMap::new(),
        }
    }

    /// DistMult, ComplEx, TuckER and LowFER.
    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(super::distmult::DistMultFactory));
        r.register(Box::new(super::complex::ComplExFactory));
        r.register(Box::new(super::tucker::TuckerFactory));
        r.register(Box::new(super::lowfer::LowferFactory));
        r
    }

    /// Adds or replaces a factory under its name.
    pub fn register(&mut self, factory: Box<dyn InteractionFactory>) {
        self.factories.insert(factory.name(), factory);
    }

    pub fn get(&self, name: &str) -> Result<&dyn InteractionFactory> {
        self.factories
            .get(name.to_ascii_lowercase().as_str())
            .map(Box::as_ref)
            .ok_or_else(|| {
                KgeError::Config(format!(
                    "unknown model kind {name:?} (known: {})",
                    self.names().collect::<Vec<_>>().join(", ")
                ))
            })
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.factories.keys().copied()
    }
}

impl Default for Registry {
    fn default() -> Self {
        Self::builtin()
    }
}
