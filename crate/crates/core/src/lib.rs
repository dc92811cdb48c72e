//! Knowledge graph embedding with iterative self-semantic distillation.
//!
//! The crate covers the whole pipeline: triple ingestion ([`kgdata`]), the
//! DistMult/ComplEx/TuckER/LowFER scorers ([`models`]), the semantic
//! extraction block and distillation loss ([`isd`]), the training loop with
//! checkpointing ([`trainer`]) and filtered ranking evaluation ([`eval`]).

pub mod config;
pub mod error;
pub mod eval;
pub mod isd;
pub mod kgdata;
pub mod models;
pub mod numkernel;
pub mod pipeline;
pub mod trainer;

pub use error::{KgeError, Result};
