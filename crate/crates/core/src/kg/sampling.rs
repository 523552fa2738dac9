use std::collections::HashSet;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{EntityId, KnowledgeGraph, NeighborIndex, RelationId, TypeId};
use crate::error::DataError;

/// A (possibly sub-sampled) neighborhood of one entity.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct NeighborSample {
    pub typeclass: Vec<(RelationId, TypeId)>,
    pub relational: Vec<(RelationId, EntityId)>,
}

impl NeighborSample {
    /// Every neighbor of `e`, in index order.
    pub fn all(index: &NeighborIndex, e: EntityId) -> Self {
        Self {
            typeclass: index.typeclass(e).to_vec(),
            relational: index.relational(e).to_vec(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.typeclass.is_empty() && self.relational.is_empty()
    }
}

fn pick<T: Copy, R: Rng + ?Sized>(items: &[T], k: usize, rng: &mut R) -> Vec<T> {
    let k = k.min(items.len());
    index::sample(rng, items.len(), k)
        .into_iter()
        .map(|i| items[i])
        .collect()
}

/// Uniform sampling without replacement; returns everything (in a random
/// order) when fewer neighbors than requested exist.
pub fn sample_neighbors<R: Rng + ?Sized>(
    index: &NeighborIndex,
    e: EntityId,
    k_type: usize,
    k_rel: usize,
    rng: &mut R,
) -> NeighborSample {
    let typeclass = pick(index.typeclass(e), k_type, rng);
    let relational = pick(index.relational(e), k_rel, rng);
    NeighborSample {
        typeclass,
        relational,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DropMode {
    /// Remove individual directed neighbor entries.
    #[default]
    RelationalNeighbors,
    /// Remove whole dataset relations (and their inverse edges).
    RelationTypes,
}

impl std::str::FromStr for DropMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "relational-neighbors" => Ok(DropMode::RelationalNeighbors),
            "relation-types" => Ok(DropMode::RelationTypes),
            _ => Err(format!(
                "unknown drop mode `{s}` (expected relational-neighbors | relation-types)"
            )),
        }
    }
}

fn drop_count(rate: f64, n: usize) -> usize {
    // Small slack so that e.g. 0.29 * 100 counts as 29.
    ((rate * n as f64) + 1e-9).floor() as usize
}

/// Sparsifies the relational structure for robustness ablations. Type
/// assertions are never touched.
pub fn drop_neighbors<R: Rng + ?Sized>(
    kg: &KnowledgeGraph,
    rate: f64,
    mode: DropMode,
    rng: &mut R,
) -> Result<KnowledgeGraph, DataError> {
    if !(0.0..1.0).contains(&rate) {
        return Err(DataError::InvalidArgument(format!(
            "drop rate {rate} outside [0, 1)"
        )));
    }
    let index = kg.neighbors();
    match mode {
        DropMode::RelationalNeighbors => {
            let total = index.num_relational_entries();
            let k = drop_count(rate, total);
            let dropped: HashSet<usize> = index::sample(rng, total, k).into_iter().collect();
            let mut next = index.clone();
            let mut flat = 0usize;
            for list in &mut next.relational {
                list.retain(|_| {
                    let keep = !dropped.contains(&flat);
                    flat += 1;
                    keep
                });
            }
            Ok(kg.with_triples_and_neighbors(kg.triples().to_vec(), next))
        }
        DropMode::RelationTypes => {
            let vocab = kg.vocab();
            let n = vocab.num_base_relations();
            let k = drop_count(rate, n);
            let dropped: HashSet<RelationId> = index::sample(rng, n, k)
                .into_iter()
                .map(RelationId::from_index)
                .collect();
            let triples: Vec<_> = kg
                .triples()
                .iter()
                .copied()
                .filter(|t| !dropped.contains(&t.rel))
                .collect();
            let mut next = index.clone();
            for list in &mut next.relational {
                list.retain(|(r, _)| {
                    let base = if vocab.is_inverse(*r) { vocab.inverse(*r) } else { *r };
                    !dropped.contains(&base)
                });
            }
            Ok(kg.with_triples_and_neighbors(triples, next))
        }
    }
}
