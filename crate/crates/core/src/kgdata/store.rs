use std::collections::HashSet;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use indexmap::IndexSet;
use serde::Serialize;

use crate::error::{KgeError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Triple {
    pub head: usize,
    pub relation: usize,
    pub tail: usize,
}

impl Triple {
    pub fn new(head: usize, relation: usize, tail: usize) -> Self {
        Self {
            head,
            relation,
            tail,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn file_name(self) -> &'static str {
        match self {
            Split::Train => "train.txt",
            Split::Valid => "valid.txt",
            Split::Test => "test.txt",
        }
    }

    pub fn parse(name: &str) -> Option<Split> {
        match name {
            "train" => Some(Split::Train),
            "valid" => Some(Split::Valid),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

/// Dense, insertion-ordered name ↔ id maps.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Vocabulary {
    entities: IndexSet<String>,
    relations: IndexSet<String>,
}

impl Vocabulary {
    pub fn from_names(
        entities: impl IntoIterator<Item = String>,
        relations: impl IntoIterator<Item = String>,
    ) -> Self {
        Self {
            entities: entities.into_iter().collect(),
            relations: relations.into_iter().collect(),
        }
    }

    pub fn entity_id(&self, name: &str) -> Option<usize> {
        self.entities.get_index_of(name)
    }

    pub fn relation_id(&self, name: &str) -> Option<usize> {
        self.relations.get_index_of(name)
    }

    pub fn entity_name(&self, id: usize) -> Option<&str> {
        self.entities.get_index(id).map(String::as_str)
    }

    pub fn relation_name(&self, id: usize) -> Option<&str> {
        self.relations.get_index(id).map(String::as_str)
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn entities(&self) -> impl Iterator<Item = &str> {
        self.entities.iter().map(String::as_str)
    }

    pub fn relations(&self) -> impl Iterator<Item = &str> {
        self.relations.iter().map(String::as_str)
    }

    fn intern_entity(&mut self, name: &str) -> usize {
        match self.entities.get_index_of(name) {
            Some(i) => i,
            None => self.entities.insert_full(name.to_string()).0,
        }
    }

    fn intern_relation(&mut self, name: &str) -> usize {
        match self.relations.get_index_of(name) {
            Some(i) => i,
            None => self.relations.insert_full(name.to_string()).0,
        }
    }
}

/// Id-encoded train/valid/test triples over one vocabulary.
///
/// After [`TripleStore::augment_reciprocal`], relation ids `>= base_relations`
/// are inverses: `(t, r + base_relations, h)` for every original `(h, r, t)`.
/// Each split then holds its original triples first, followed by their
/// reciprocals in the same order.
#[derive(Clone, Debug, PartialEq)]
pub struct TripleStore {
    pub vocab: Vocabulary,
    pub train: Vec<Triple>,
    pub valid: Vec<Triple>,
    pub test: Vec<Triple>,
    base_relations: usize,
    augmented: bool,
    duplicates_dropped: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct DatasetStats {
    pub entities: usize,
    pub relations: usize,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
    pub duplicates_dropped: usize,
}

impl TripleStore {
    pub fn new(
        vocab: Vocabulary,
        train: Vec<Triple>,
        valid: Vec<Triple>,
        test: Vec<Triple>,
    ) -> Result<Self> {
        let store = Self {
            base_relations: vocab.num_relations(),
            vocab,
            train,
            valid,
            test,
            augmented: false,
            duplicates_dropped: 0,
        };
        store.validate()?;
        Ok(store)
    }

    fn validate(&self) -> Result<()> {
        let (ne, nr) = (self.num_entities(), self.num_relations());
        for split in Split::ALL {
            let mut seen = HashSet::new();
            for t in self.split(split) {
                if t.head >= ne || t.tail >= ne {
                    return Err(KgeError::Index {
                        index: t.head.max(t.tail),
                        size: ne,
                    });
                }
                if t.relation >= nr {
                    return Err(KgeError::Index {
                        index: t.relation,
                        size: nr,
                    });
                }
                if !seen.insert(*t) {
                    return Err(KgeError::Parameter(format!(
                        "duplicate triple {t:?} in {split:?} split"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Reads `train.txt`, `valid.txt` and `test.txt` (TAB-separated
    /// `head relation tail` lines). Ids are assigned in order of first
    /// appearance over train, valid, test. Repeated lines within a split are
    /// kept once.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut vocab = Vocabulary::default();
        let mut splits: [Vec<Triple>; 3] = Default::default();
        let mut dropped = 0;
        for (slot, split) in splits.iter_mut().zip(Split::ALL) {
            let path = dir.join(split.file_name());
            let text = fs::read_to_string(&path).map_err(|e| KgeError::io(&path, e))?;
            let mut seen = HashSet::new();
            for (lineno, line) in text.lines().enumerate() {
                let line = line.strip_suffix('\r').unwrap_or(line);
                if line.is_empty() {
                    continue;
                }
                let fields: Vec<&str> = line.split('\t').collect();
                if fields.len() != 3 {
                    return Err(KgeError::Parse {
                        path: path.clone(),
                        line: lineno + 1,
                        message: format!("expected 3 tab-separated fields, found {}", fields.len()),
                    });
                }
                let triple = Triple::new(
                    vocab.intern_entity(fields[0]),
                    vocab.intern_relation(fields[1]),
                    vocab.intern_entity(fields[2]),
                );
                if seen.insert(triple) {
                    slot.push(triple);
                } else {
                    dropped += 1;
                }
            }
        }
        let [train, valid, test] = splits;
        let mut store = Self::new(vocab, train, valid, test)?;
        store.duplicates_dropped = dropped;
        Ok(store)
    }

    /// Writes the original (non-reciprocal) triples back as text files.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| KgeError::io(dir, e))?;
        for split in Split::ALL {
            let path = dir.join(split.file_name());
            let file = fs::File::create(&path).map_err(|e| KgeError::io(&path, e))?;
            let mut w = BufWriter::new(file);
            for t in self.original(split) {
                let name = |id| self.vocab.entity_name(id).expect("validated id");
                writeln!(
                    w,
                    "{}\t{}\t{}",
                    name(t.head),
                    self.vocab.relation_name(t.relation).expect("validated id"),
                    name(t.tail)
                )
                .map_err(|e| KgeError::io(&path, e))?;
            }
            w.flush().map_err(|e| KgeError::io(&path, e))?;
        }
        Ok(())
    }

    pub fn split(&self, split: Split) -> &[Triple] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    /// The split without reciprocal triples.
    pub fn original(&self, split: Split) -> &[Triple] {
        let all = self.split(split);
        if self.augmented {
            &all[..all.len() / 2]
        } else {
            all
        }
    }

    pub fn num_entities(&self) -> usize {
        self.vocab.num_entities()
    }

    /// Relation count including reciprocal relations once augmented.
    pub fn num_relations(&self) -> usize {
        if self.augmented {
            2 * self.base_relations
        } else {
            self.base_relations
        }
    }

    pub fn base_relations(&self) -> usize {
        self.base_relations
    }

    pub fn is_augmented(&self) -> bool {
        self.augmented
    }

    pub fn stats(&self) -> DatasetStats {
        DatasetStats {
            entities: self.num_entities(),
            relations: self.num_relations(),
            train: self.train.len(),
            valid: self.valid.len(),
            test: self.test.len(),
            duplicates_dropped: self.duplicates_dropped,
        }
    }

    /// Adds `(t, r + N_r, h)` for every triple in every split.
    pub fn augment_reciprocal(mut self) -> Self {
        if self.augmented {
            return self;
        }
        let nr = self.base_relations;
        for split in [&mut self.train, &mut self.valid, &mut self.test] {
            let inverse: Vec<Triple> = split
                .iter()
                .map(|t| Triple::new(t.tail, t.relation + nr, t.head))
                .collect();
            split.extend(inverse);
        }
        self.augmented = true;
        self
    }

    pub fn inverse_relation(&self, relation: usize) -> usize {
        if relation < self.base_relations {
            relation + self.base_relations
        } else {
            relation - self.base_relations
        }
    }
}
