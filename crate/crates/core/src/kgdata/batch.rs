use std::collections::BTreeMap;

use super::store::Triple;
use crate::error::{KgeError, Result};
use crate::numkernel::{RngState, Tensor};

/// One 1-N training batch: `bs` distinct `(head, relation)` queries and their
/// multi-label target rows over every entity.
#[derive(Clone, Debug)]
pub struct Batch {
    pub heads: Vec<usize>,
    pub relations: Vec<usize>,
    /// `bs × N_e`, `targets[i, t] = 1` iff `(heads[i], relations[i], t)` is a
    /// training triple.
    pub targets: Tensor,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.heads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heads.is_empty()
    }
}

/// Distinct training queries with their tails, in `(head, relation)` order.
#[derive(Clone, Debug)]
pub struct QueryIndex {
    queries: Vec<(usize, usize)>,
    tails: Vec<Vec<usize>>,
    num_entities: usize,
}

impl QueryIndex {
    pub fn build(train: &[Triple], num_entities: usize) -> Self {
        let mut map: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
        for t in train {
            map.entry((t.head, t.relation)).or_default().push(t.tail);
        }
        let (queries, mut tails): (Vec<_>, Vec<_>) = map.into_iter().unzip();
        for v in &mut tails {
            v.sort_unstable();
            v.dedup();
        }
        Self {
            queries,
            tails,
            num_entities,
        }
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn tails(&self, query: usize) -> &[usize] {
        &self.tails[query]
    }

    /// Shuffles the queries with `rng` and cuts them into full batches of
    /// `bs`; the trailing partial batch is dropped.
    pub fn schedule(&self, bs: usize, rng: &mut RngState) -> Result<BatchSchedule<'_>> {
        if bs == 0 {
            return Err(KgeError::Config("batch size must be at least 1".into()));
        }
        if bs > self.queries.len() {
            return Err(KgeError::Config(format!(
                "batch size {bs} exceeds the {} distinct training queries",
                self.queries.len()
            )));
        }
        let mut order: Vec<usize> = (0..self.queries.len()).collect();
        rng.shuffle(&mut order);
        order.truncate(self.queries.len() / bs * bs);
        Ok(BatchSchedule {
            index: self,
            order,
            bs,
        })
    }

    /// Materializes the batch made of the given query positions.
    pub fn batch(&self, queries: &[usize]) -> Batch {
        let ne = self.num_entities;
        let mut targets = Tensor::zeros(&[queries.len(), ne]);
        let mut heads = Vec::with_capacity(queries.len());
        let mut relations = Vec::with_capacity(queries.len());
        for (row, &q) in queries.iter().enumerate() {
            let (h, r) = self.queries[q];
            heads.push(h);
            relations.push(r);
            let y = targets.row_mut(row);
            for &t in &self.tails[q] {
                y[t] = 1.0;
            }
        }
        Batch {
            heads,
            relations,
            targets,
        }
    }
}

/// One epoch's batch order. Batches are built lazily: a full epoch of dense
/// `bs × N_e` targets would not fit in memory on real datasets.
#[derive(Clone, Debug)]
pub struct BatchSchedule<'a> {
    index: &'a QueryIndex,
    order: Vec<usize>,
    bs: usize,
}

impl<'a> BatchSchedule<'a> {
    pub fn num_batches(&self) -> usize {
        self.order.len() / self.bs
    }

    pub fn batch(&self, i: usize) -> Batch {
        self.index
            .batch(&self.order[i * self.bs..(i + 1) * self.bs])
    }

    pub fn iter(&self) -> impl Iterator<Item = Batch> + '_ {
        (0..self.num_batches()).map(move |i| self.batch(i))
    }
}

/// Builds the query index and one shuffled batch schedule, materialized.
pub fn make_batches(
    train: &[Triple],
    num_entities: usize,
    bs: usize,
    rng: &mut RngState,
) -> Result<Vec<Batch>> {
    let index = QueryIndex::build(train, num_entities);
    let schedule = index.schedule(bs, rng)?;
    Ok(schedule.iter().collect())
}

/// `(1 - ε)·Y + ε / N_e`.
pub fn label_smooth(targets: &Tensor, epsilon: f64) -> Result<Tensor> {
    if !(0.0..1.0).contains(&epsilon) {
        return Err(KgeError::Parameter(format!(
            "label smoothing must lie in [0, 1), got {epsilon}"
        )));
    }
    if epsilon == 0.0 {
        return Ok(targets.clone());
    }
    let ne = targets.cols() as f64;
    Ok(targets.map(|y| (1.0 - epsilon) * y + epsilon / ne))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(h: usize, r: usize, tl: usize) -> Triple {
        Triple::new(h, r, tl)
    }

    #[test]
    fn floor_division_drops_partial_batch() {
        let train: Vec<Triple> = (0..5).map(|h| t(h, 0, (h + 1) % 5)).collect();
        let batches = make_batches(&train, 5, 2, &mut RngState::new(0)).unwrap();
        assert_eq!(batches.len(), 2);
        assert!(batches.iter().all(|b| b.len() == 2));
    }

    #[test]
    fn same_seed_same_order() {
        let train: Vec<Triple> = (0..20).map(|h| t(h, h % 3, (h * 7) % 20)).collect();
        let a = make_batches(&train, 20, 4, &mut RngState::new(9)).unwrap();
        let b = make_batches(&train, 20, 4, &mut RngState::new(9)).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.heads, y.heads);
            assert_eq!(x.relations, y.relations);
        }
    }

    #[test]
    fn multi_label_row() {
        let train = vec![t(0, 0, 1), t(0, 0, 2)];
        let batches = make_batches(&train, 4, 1, &mut RngState::new(0)).unwrap();
        assert_eq!(batches[0].targets.data(), &[0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn oversized_batch_is_config_error() {
        let train = vec![t(0, 0, 1)];
        assert!(matches!(
            make_batches(&train, 2, 2, &mut RngState::new(0)),
            Err(KgeError::Config(_))
        ));
    }

    #[test]
    fn rows_sum_to_tail_counts() {
        let train = vec![t(0, 0, 1), t(0, 0, 2), t(1, 0, 2), t(2, 1, 0), t(0, 0, 3)];
        let index = QueryIndex::build(&train, 4);
        let mut rng = RngState::new(3);
        let sched = index.schedule(1, &mut rng).unwrap();
        for b in sched.iter() {
            let count = train
                .iter()
                .filter(|x| x.head == b.heads[0] && x.relation == b.relations[0])
                .count();
            assert_eq!(b.targets.sum(), count as f64);
        }
    }

    #[test]
    fn smoothing_formula() {
        let y = Tensor::from_rows(&[vec![1.0, 0.0, 0.0, 0.0], vec![1.0; 4]]);
        assert_eq!(label_smooth(&y, 0.0).unwrap(), y);
        let s = label_smooth(&y, 0.1).unwrap();
        let expect = [0.925, 0.025, 0.025, 0.025, 0.925, 0.925, 0.925, 0.925];
        for (a, b) in s.data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}
