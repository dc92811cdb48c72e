use std::collections::HashMap;

use super::store::{Split, TripleStore};

/// Every known tail of each `(head, relation)` query over train ∪ valid ∪
/// test. With reciprocal relations present this also answers head queries.
#[derive(Clone, Debug, Default)]
pub struct FilterIndex {
    tails: HashMap<(usize, usize), Vec<usize>>,
}

impl FilterIndex {
    pub fn build(store: &TripleStore) -> Self {
        let mut tails: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        for split in Split::ALL {
            for t in store.split(split) {
                tails.entry((t.head, t.relation)).or_default().push(t.tail);
            }
        }
        for v in tails.values_mut() {
            v.sort_unstable();
            v.dedup();
        }
        Self { tails }
    }

    /// Sorted known tails; empty for unseen queries.
    pub fn tails(&self, head: usize, relation: usize) -> &[usize] {
        self.tails.get(&(head, relation)).map_or(&[], Vec::as_slice)
    }

    pub fn contains(&self, head: usize, relation: usize, tail: usize) -> bool {
        self.tails(head, relation).binary_search(&tail).is_ok()
    }

    /// Number of distinct `(head, relation)` queries.
    pub fn len(&self) -> usize {
        self.tails.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tails.is_empty()
    }
}
