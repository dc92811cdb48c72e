//! Deterministic random knowledge graphs for tests and smoke runs.

use std::collections::HashSet;

use super::store::{Triple, TripleStore, Vocabulary};
use crate::error::{KgeError, Result};
use crate::numkernel::RngState;

#[derive(Clone, Debug)]
pub struct SyntheticSpec {
    pub entities: usize,
    pub relations: usize,
    /// Distinct triples generated per relation, before splitting.
    pub triples_per_relation: usize,
    pub valid: usize,
    pub test: usize,
    pub seed: u64,
    /// Store every fact in both directions, so each relation is symmetric.
    pub symmetric: bool,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            entities: 30,
            relations: 3,
            triples_per_relation: 30,
            valid: 6,
            test: 6,
            seed: 1,
            symmetric: false,
        }
    }
}

/// Uniformly random triples without self-loops, shuffled and split into
/// test, valid and train (in that order of carving). Symmetric graphs draw
/// pairs and add both directions, rounding each relation up to an even count.
pub fn synthetic_kg(spec: &SyntheticSpec) -> Result<TripleStore> {
    let max_per_rel = spec.entities * spec.entities.saturating_sub(1);
    if spec.entities < 2 || spec.relations == 0 || spec.triples_per_relation > max_per_rel {
        return Err(KgeError::Config(format!(
            "cannot draw {} distinct triples per relation over {} entities",
            spec.triples_per_relation, spec.entities
        )));
    }
    let total = spec.relations * (spec.triples_per_relation + usize::from(spec.symmetric));
    if spec.valid + spec.test >= total {
        return Err(KgeError::Config(
            "valid + test leaves no training triples".into(),
        ));
    }
    let mut rng = RngState::new(spec.seed);
    let mut seen = HashSet::new();
    let mut triples = Vec::with_capacity(total);
    for r in 0..spec.relations {
        let mut count = 0;
        while count < spec.triples_per_relation {
            let h = (rng.uniform() * spec.entities as f64) as usize;
            let t = (rng.uniform() * spec.entities as f64) as usize;
            if h == t || !seen.insert((h, r, t)) {
                continue;
            }
            triples.push(Triple::new(h, r, t));
            count += 1;
            if spec.symmetric {
                seen.insert((t, r, h));
                triples.push(Triple::new(t, r, h));
                count += 1;
            }
        }
    }
    rng.shuffle(&mut triples);
    let test = triples.split_off(triples.len() - spec.test);
    let valid = triples.split_off(triples.len() - spec.valid);
    let vocab = Vocabulary::from_names(
        (0..spec.entities).map(|i| format!("e{i:03}")),
        (0..spec.relations).map(|i| format!("rel{i}")),
    );
    TripleStore::new(vocab, triples, valid, test)
}
