//! Triple ingestion, vocabularies, reciprocal augmentation, filter indices
//! and 1-N mini-batches.

mod batch;
mod filter;
mod store;
pub mod synthetic;

pub use batch::{label_smooth, make_batches, Batch, BatchSchedule, QueryIndex};
pub use filter::FilterIndex;
pub use store::{DatasetStats, Split, Triple, TripleStore, Vocabulary};
pub use synthetic::{synthetic_kg, SyntheticSpec};
