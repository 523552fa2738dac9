//! Filtered ranking metrics.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::kg::{sample_neighbors, EntityId, KnowledgeGraph, Split, TypeId};
use crate::model::{EntityInput, TetModel};
use crate::nn::{Graph, ParameterStore, Real};

/// How competitors with a score equal to the gold type are counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TiePolicy {
    /// Only strictly better competitors push the gold type down.
    #[default]
    Optimistic,
    /// Ties count half.
    Mean,
}

impl FromStr for TiePolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "optimistic" => Ok(TiePolicy::Optimistic),
            "mean" => Ok(TiePolicy::Mean),
            _ => Err(format!("unknown tie policy `{s}` (expected optimistic or mean)")),
        }
    }
}

impl fmt::Display for TiePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TiePolicy::Optimistic => "optimistic",
            TiePolicy::Mean => "mean",
        })
    }
}

/// 1-based rank of `scores[gold]` among all types not marked in `filtered`.
/// The gold entry itself is never filtered.
pub fn filtered_rank(scores: &[f64], gold: usize, filtered: &[bool], policy: TiePolicy) -> f64 {
    assert_eq!(scores.len(), filtered.len(), "filter mask must cover every type");
    assert!(gold < scores.len(), "gold index out of range");
    let target = scores[gold];
    let mut greater = 0usize;
    let mut ties = 0usize;
    for (k, (&s, &f)) in scores.iter().zip(filtered).enumerate() {
        if k == gold || f {
            continue;
        }
        if s > target {
            greater += 1;
        } else if s == target {
            ties += 1;
        }
    }
    match policy {
        TiePolicy::Optimistic => 1.0 + greater as f64,
        TiePolicy::Mean => 1.0 + greater as f64 + ties as f64 / 2.0,
    }
}

/// Mean reciprocal rank. Panics on an empty list.
pub fn mrr(ranks: &[f64]) -> f64 {
    assert!(!ranks.is_empty(), "MRR of no queries");
    ranks.iter().map(|r| 1.0 / r).sum::<f64>() / ranks.len() as f64
}

/// Fraction of ranks within the top `k`.
pub fn hits_at_k(ranks: &[f64], k: usize) -> f64 {
    assert!(k >= 1, "cutoff must be at least 1");
    if ranks.is_empty() {
        return 0.0;
    }
    ranks.iter().filter(|&&r| r <= k as f64).count() as f64 / ranks.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub queries: usize,
    pub mrr: f64,
    pub hit1: f64,
    pub hit3: f64,
    pub hit10: f64,
}

impl MetricsReport {
    pub fn from_ranks(ranks: &[f64]) -> Self {
        Self {
            queries: ranks.len(),
            mrr: if ranks.is_empty() { 0.0 } else { mrr(ranks) },
            hit1: hits_at_k(ranks, 1),
            hit3: hits_at_k(ranks, 3),
            hit10: hits_at_k(ranks, 10),
        }
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "queries={} MRR={:.4} Hit@1={:.4} Hit@3={:.4} Hit@10={:.4}",
            self.queries, self.mrr, self.hit1, self.hit3, self.hit10
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankedQuery {
    pub entity: EntityId,
    pub ty: TypeId,
    pub rank: f64,
}

/// Neighborhoods used while scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NeighborMode {
    All,
    /// Sampled with the training sample sizes; the generator for each
    /// entity is seeded from `seed` and the entity id.
    Sampled { k_type: usize, k_rel: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalOptions {
    pub split: Split,
    pub tie_policy: TiePolicy,
    pub neighbors: NeighborMode,
    pub threads: usize,
}

impl EvalOptions {
    pub fn new(split: Split) -> Self {
        Self {
            split,
            tie_policy: TiePolicy::Optimistic,
            neighbors: NeighborMode::All,
            threads: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutput {
    pub report: MetricsReport,
    pub queries: Vec<RankedQuery>,
}

/// Pooled scores of single entities, one graph per entity.
pub fn score_entity<F: Real>(
    model: &TetModel,
    store: &ParameterStore<F>,
    kg: &KnowledgeGraph,
    input: &EntityInput,
) -> Vec<f64> {
    let mut g = Graph::new(store);
    let out = model.forward(&mut g, kg, std::slice::from_ref(input));
    g.value(out.logits).to_f64_vec()
}

fn input_for(kg: &KnowledgeGraph, e: EntityId, mode: NeighborMode) -> EntityInput {
    match mode {
        NeighborMode::All => EntityInput::full(kg, e),
        NeighborMode::Sampled { k_type, k_rel, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (u64::from(e.0) << 32 | 0x5eed));
            EntityInput {
                entity: e,
                sample: sample_neighbors(kg.neighbors(), e, k_type, k_rel, &mut rng),
            }
        }
    }
}

/// Ranks every assertion of `opts.split` against all types, filtering the
/// entity's other known types from train, valid and test.
pub fn evaluate<F: Real>(
    model: &TetModel,
    store: &ParameterStore<F>,
    kg: &KnowledgeGraph,
    opts: &EvalOptions,
) -> EvalOutput {
    let entities = kg.entities_in(opts.split);
    let rank_entity = |&e: &EntityId| -> Vec<RankedQuery> {
        let scores = score_entity(model, store, kg, &input_for(kg, e, opts.neighbors));
        let known = kg.positive_label_row(e, &Split::ALL);
        kg.types_of(e, opts.split)
            .iter()
            .map(|&ty| {
                let mut filtered = known.clone();
                filtered[ty.index()] = false;
                RankedQuery {
                    entity: e,
                    ty,
                    rank: filtered_rank(&scores, ty.index(), &filtered, opts.tie_policy),
                }
            })
            .collect()
    };
    let per_entity: Vec<Vec<RankedQuery>> = if opts.threads > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.threads)
            .build()
            .expect("thread pool");
        pool.install(|| entities.par_iter().map(rank_entity).collect())
    } else {
        entities.iter().map(rank_entity).collect()
    };
    let queries: Vec<RankedQuery> = per_entity.into_iter().flatten().collect();
    let ranks: Vec<f64> = queries.iter().map(|q| q.rank).collect();
    EvalOutput {
        report: MetricsReport::from_ranks(&ranks),
        queries,
    }
}
