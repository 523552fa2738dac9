use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::vocab::{inverse_label, HAS_TYPE};
use super::{
    extract_classes, ClassMap, EntityId, LoadOptions, NeighborIndex, RelationId, Split, Triple,
    TypeAssertion, TypeId, UnknownEntityPolicy, Vocab, Vocabularies,
};
use crate::error::DataError;

/// Label-level triple before interning.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawTriple {
    pub head: String,
    pub rel: String,
    pub tail: String,
}

/// Label-level type assertion; `line` is used in error messages.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawAssertion {
    pub entity: String,
    pub ty: String,
    pub line: usize,
}

/// Counts mirroring the usual dataset statistics table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub entities: usize,
    pub relations: usize,
    pub types: usize,
    pub clusters: usize,
    pub train_triples: usize,
    pub train_tuples: usize,
    pub valid: usize,
    pub test: usize,
}

/// An indexed entity-typing knowledge graph. Immutable once built.
#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    vocab: Vocabularies,
    triples: Vec<Triple>,
    assertions: Vec<TypeAssertion>,
    classmap: ClassMap,
    neighbors: NeighborIndex,
    // [split][entity] -> sorted type ids
    types_by_split: [Vec<Vec<TypeId>>; 3],
}

impl KnowledgeGraph {
    pub fn vocab(&self) -> &Vocabularies {
        &self.vocab
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn assertions(&self) -> &[TypeAssertion] {
        &self.assertions
    }

    pub fn assertions_in(&self, split: Split) -> impl Iterator<Item = &TypeAssertion> + '_ {
        self.assertions.iter().filter(move |a| a.split == split)
    }

    pub fn classmap(&self) -> &ClassMap {
        &self.classmap
    }

    pub fn neighbors(&self) -> &NeighborIndex {
        &self.neighbors
    }

    pub fn num_entities(&self) -> usize {
        self.vocab.entities.len()
    }

    pub fn num_types(&self) -> usize {
        self.vocab.types.len()
    }

    pub fn types_of(&self, e: EntityId, split: Split) -> &[TypeId] {
        &self.types_by_split[split.slot()][e.index()]
    }

    /// Bit `k` is set iff `(e, k)` is asserted in any of `splits`.
    pub fn positive_label_row(&self, e: EntityId, splits: &[Split]) -> Vec<bool> {
        let mut row = vec![false; self.num_types()];
        for &s in splits {
            for t in self.types_of(e, s) {
                row[t.index()] = true;
            }
        }
        row
    }

    /// Entities with at least one assertion in `split`, in id order.
    pub fn entities_in(&self, split: Split) -> Vec<EntityId> {
        self.types_by_split[split.slot()]
            .iter()
            .enumerate()
            .filter(|(_, ts)| !ts.is_empty())
            .map(|(i, _)| EntityId::from_index(i))
            .collect()
    }

    /// Relations with at least one triple.
    pub fn active_relations(&self) -> usize {
        self.triples.iter().map(|t| t.rel).collect::<HashSet<_>>().len()
    }

    pub fn stats(&self) -> DatasetStats {
        let count = |s: Split| self.assertions_in(s).count();
        DatasetStats {
            entities: self.vocab.entities.len(),
            relations: self.vocab.num_base_relations,
            types: self.vocab.types.len(),
            clusters: self.classmap.num_classes(),
            train_triples: self.triples.len(),
            train_tuples: count(Split::Train),
            valid: count(Split::Valid),
            test: count(Split::Test),
        }
    }

    /// Recomputes the neighbor index from the train triples and assertions.
    pub fn build_neighbor_index(&self, include_inverse: bool) -> NeighborIndex {
        NeighborIndex::build(
            &self.vocab,
            &self.triples,
            self.assertions_in(Split::Train).map(|a| (a.entity, a.ty)),
            &self.classmap,
            include_inverse,
        )
    }

    pub fn with_neighbors(mut self, neighbors: NeighborIndex) -> Self {
        assert_eq!(neighbors.num_entities(), self.num_entities());
        self.neighbors = neighbors;
        self
    }

    pub(crate) fn with_triples_and_neighbors(
        &self,
        triples: Vec<Triple>,
        neighbors: NeighborIndex,
    ) -> Self {
        Self {
            triples,
            neighbors,
            ..self.clone()
        }
    }
}

/// Assembles a [`KnowledgeGraph`] from label-level records.
#[derive(Debug, Clone, Default)]
pub struct KgBuilder {
    triples: Vec<RawTriple>,
    assertions: [Vec<RawAssertion>; 3],
    class_overrides: Option<HashMap<String, String>>,
    options: LoadOptions,
}

impl KgBuilder {
    pub fn new(options: LoadOptions) -> Self {
        Self {
            options,
            ..Self::default()
        }
    }

    pub fn triple(&mut self, head: &str, rel: &str, tail: &str) -> &mut Self {
        self.triples.push(RawTriple {
            head: head.into(),
            rel: rel.into(),
            tail: tail.into(),
        });
        self
    }

    pub fn raw_triple(&mut self, t: RawTriple) -> &mut Self {
        self.triples.push(t);
        self
    }

    pub fn assertion(&mut self, split: Split, entity: &str, ty: &str) -> &mut Self {
        let line = self.assertions[split.slot()].len() + 1;
        self.raw_assertion(
            split,
            RawAssertion {
                entity: entity.into(),
                ty: ty.into(),
                line,
            },
        )
    }

    pub fn raw_assertion(&mut self, split: Split, a: RawAssertion) -> &mut Self {
        self.assertions[split.slot()].push(a);
        self
    }

    pub fn class_overrides(&mut self, overrides: HashMap<String, String>) -> &mut Self {
        self.class_overrides = Some(overrides);
        self
    }

    pub fn build(&self) -> Result<KnowledgeGraph, DataError> {
        let mut entities = Vocab::new();
        let mut relations = Vocab::new();
        let mut types = Vocab::new();

        for t in &self.triples {
            entities.intern(&t.head);
            relations.intern(&t.rel);
            entities.intern(&t.tail);
        }
        for a in &self.assertions[Split::Train.slot()] {
            entities.intern(&a.entity);
        }
        let num_base_relations = relations.len();
        let base: Vec<String> = relations.iter().map(str::to_owned).collect();
        for r in &base {
            let inv = inverse_label(r);
            relations
                .insert_new(inv.clone())
                .ok_or(DataError::LabelCollision(inv))?;
        }
        relations
            .insert_new(HAS_TYPE.to_owned())
            .ok_or_else(|| DataError::LabelCollision(HAS_TYPE.to_owned()))?;

        let mut assertions = Vec::new();
        for split in Split::ALL {
            let mut seen = HashSet::new();
            for a in &self.assertions[split.slot()] {
                let entity = match entities.get(&a.entity) {
                    Some(e) => e,
                    None => match self.options.unknown_entities {
                        UnknownEntityPolicy::Reject => {
                            return Err(DataError::UnknownEntity {
                                label: a.entity.clone(),
                                split: split.name(),
                                line: a.line,
                            })
                        }
                        UnknownEntityPolicy::AddIsolated => entities.intern(&a.entity),
                    },
                };
                let ty = types.intern(&a.ty);
                if seen.insert((entity, ty)) {
                    assertions.push(TypeAssertion {
                        entity: EntityId::from_index(entity),
                        ty: TypeId::from_index(ty),
                        split,
                    });
                }
            }
        }

        let (classes, classmap) = extract_classes(
            types.iter(),
            self.options.class_rule,
            self.class_overrides.as_ref(),
            &mut relations,
        )?;

        let mut seen = HashSet::new();
        let triples: Vec<Triple> = self
            .triples
            .iter()
            .map(|t| Triple {
                head: EntityId::from_index(entities.get(&t.head).unwrap()),
                rel: RelationId::from_index(relations.get(&t.rel).unwrap()),
                tail: EntityId::from_index(entities.get(&t.tail).unwrap()),
            })
            .filter(|t| seen.insert(*t))
            .collect();

        let vocab = Vocabularies {
            entities,
            relations,
            types,
            classes,
            num_base_relations,
        };
        let mut types_by_split: [Vec<Vec<TypeId>>; 3] =
            std::array::from_fn(|_| vec![Vec::new(); vocab.entities.len()]);
        for a in &assertions {
            types_by_split[a.split.slot()][a.entity.index()].push(a.ty);
        }
        for per_split in &mut types_by_split {
            for ts in per_split.iter_mut() {
                ts.sort_unstable();
            }
        }
        let neighbors = NeighborIndex::build(
            &vocab,
            &triples,
            assertions
                .iter()
                .filter(|a| a.split == Split::Train)
                .map(|a| (a.entity, a.ty)),
            &classmap,
            self.options.include_inverse,
        );
        Ok(KnowledgeGraph {
            vocab,
            triples,
            assertions,
            classmap,
            neighbors,
            types_by_split,
        })
    }
}
