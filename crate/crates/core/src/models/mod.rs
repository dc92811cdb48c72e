//! The four scoring models behind a name-keyed [`Registry`], the shared
//! forward pipeline, and parameter counting.

pub mod complex;
mod config;
pub mod distmult;
pub mod lowfer;
mod model;
mod registry;
mod score;
pub mod tucker;

pub use config::ModelConfig;
pub use model::{
    count_parameters, BlockSize, KgeModel, EMBEDDING_INIT_STD, ENTITY_PARAM, RELATION_PARAM,
};
pub use registry::{Interaction, InteractionFactory, Registry};
pub use score::{score_complex, score_distmult, score_lowfer, score_tucker};
