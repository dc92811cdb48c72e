//! Filtered link-prediction ranking with MRR and Hits@k over both head and
//! tail directions.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{KgeError, Result};
use crate::kgdata::{FilterIndex, Triple};
use crate::models::KgeModel;
use crate::numkernel::ParamStore;

/// How candidates scoring exactly as high as the true entity are counted.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TiePolicy {
    /// `1 + greater + ties / 2`
    #[default]
    Average,
    /// `1 + greater`
    Optimistic,
    /// `1 + greater + ties`
    Pessimistic,
}

/// Rank of `true_id` among all entities once every id in `filter` other than
/// `true_id` itself has been removed.
pub fn filtered_rank(
    logits: &[f64],
    true_id: usize,
    filter: &[usize],
    policy: TiePolicy,
) -> Result<f64> {
    let n = logits.len();
    if true_id >= n {
        return Err(KgeError::Index {
            index: true_id,
            size: n,
        });
    }
    let target = logits[true_id];
    let mut greater = 0usize;
    let mut ties = 0usize;
    for (c, &u) in logits.iter().enumerate() {
        if c == true_id {
            continue;
        }
        if u > target {
            greater += 1;
        } else if u == target {
            ties += 1;
        }
    }
    let mut removed: Vec<usize> = filter.iter().copied().filter(|&f| f != true_id).collect();
    removed.sort_unstable();
    removed.dedup();
    for f in removed {
        let Some(&u) = logits.get(f) else {
            return Err(KgeError::Index { index: f, size: n });
        };
        if u > target {
            greater -= 1;
        } else if u == target {
            ties -= 1;
        }
    }
    Ok(match policy {
        TiePolicy::Average => 1.0 + greater as f64 + ties as f64 / 2.0,
        TiePolicy::Optimistic => 1.0 + greater as f64,
        TiePolicy::Pessimistic => 1.0 + (greater + ties) as f64,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DirectionMetrics {
    pub mrr: f64,
    pub h1: f64,
    pub h3: f64,
    pub h10: f64,
}

impl DirectionMetrics {
    fn from_ranks(ranks: &[f64]) -> Self {
        if ranks.is_empty() {
            return Self::default();
        }
        let n = ranks.len() as f64;
        let hits = |k: f64| ranks.iter().filter(|&&r| r <= k).count() as f64 / n;
        // summing in sorted order makes the result independent of triple order
        let mut sorted = ranks.to_vec();
        sorted.sort_by(f64::total_cmp);
        Self {
            mrr: sorted.iter().map(|r| 1.0 / r).sum::<f64>() / n,
            h1: hits(1.0),
            h3: hits(3.0),
            h10: hits(10.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mrr: f64,
    pub h1: f64,
    pub h3: f64,
    pub h10: f64,
    pub head: DirectionMetrics,
    pub tail: DirectionMetrics,
    pub num_triples: usize,
}

/// Per-triple ranks in both directions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RankResult {
    pub head: f64,
    pub tail: f64,
}

impl MetricsReport {
    /// Averages over all `2·|ranks|` head and tail ranks.
    pub fn from_ranks(ranks: &[RankResult]) -> Result<Self> {
        if ranks.is_empty() {
            return Err(KgeError::Parameter("cannot evaluate an empty split".into()));
        }
        let heads: Vec<f64> = ranks.iter().map(|r| r.head).collect();
        let tails: Vec<f64> = ranks.iter().map(|r| r.tail).collect();
        let both: Vec<f64> = ranks.iter().flat_map(|r| [r.head, r.tail]).collect();
        let all = DirectionMetrics::from_ranks(&both);
        Ok(Self {
            mrr: all.mrr,
            h1: all.h1,
            h3: all.h3,
            h10: all.h10,
            head: DirectionMetrics::from_ranks(&heads),
            tail: DirectionMetrics::from_ranks(&tails),
            num_triples: ranks.len(),
        })
    }
}

/// Inference-time settings.
#[derive(Clone, Copy, Debug)]
pub struct EvalOptions {
    pub tie_policy: TiePolicy,
    /// Queries scored per forward pass.
    pub chunk: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            tie_policy: TiePolicy::Average,
            chunk: 256,
        }
    }
}

/// Ranks every triple in both directions. Head prediction for `(h, r, t)` is
/// tail prediction for `(t, r + inverse_offset)`.
pub fn rank_triples(
    model: &KgeModel,
    store: &ParamStore,
    triples: &[Triple],
    filter: &FilterIndex,
    inverse_offset: usize,
    options: EvalOptions,
) -> Result<Vec<RankResult>> {
    // query 2i: (h, r) → t, query 2i + 1: (t, r⁻¹) → h
    let queries: Vec<(usize, usize, usize)> = triples
        .iter()
        .flat_map(|t| {
            [
                (t.head, t.relation, t.tail),
                (t.tail, t.relation + inverse_offset, t.head),
            ]
        })
        .collect();
    let chunk = options.chunk.max(1);
    let ranks: Vec<Vec<f64>> = queries
        .par_chunks(chunk)
        .map(|qs| -> Result<Vec<f64>> {
            let heads: Vec<usize> = qs.iter().map(|q| q.0).collect();
            let rels: Vec<usize> = qs.iter().map(|q| q.1).collect();
            let logits = model.predict(store, &heads, &rels)?;
            qs.iter()
                .enumerate()
                .map(|(i, &(h, r, answer))| {
                    filtered_rank(
                        logits.row(i),
                        answer,
                        filter.tails(h, r),
                        options.tie_policy,
                    )
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let flat: Vec<f64> = ranks.into_iter().flatten().collect();
    Ok(flat
        .chunks(2)
        .map(|p| RankResult {
            tail: p[0],
            head: p[1],
        })
        .collect())
}

/// Filtered MRR and Hits@{1,3,10} over `triples` (original direction only).
pub fn evaluate(
    model: &KgeModel,
    store: &ParamStore,
    triples: &[Triple],
    filter: &FilterIndex,
    inverse_offset: usize,
    options: EvalOptions,
) -> Result<MetricsReport> {
    if triples.is_empty() {
        return Err(KgeError::Parameter("cannot evaluate an empty split".into()));
    }
    let ranks = rank_triples(model, store, triples, filter, inverse_offset, options)?;
    MetricsReport::from_ranks(&ranks)
}
