use super::{ClassMap, EntityId, RelationId, Triple, TypeId, Vocabularies};

/// Relational and type-class neighbors of every entity.
///
/// Type-class neighbors are derived from train assertions only, so held-out
/// labels never leak into model inputs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborIndex {
    pub(crate) relational: Vec<Vec<(RelationId, EntityId)>>,
    pub(crate) typeclass: Vec<Vec<(RelationId, TypeId)>>,
    include_inverse: bool,
}

impl NeighborIndex {
    /// Relational lists hold `(r, f)` for every train triple `(e, r, f)` and,
    /// when `include_inverse` is set, `(r^-1, h)` for every `(h, r, e)`.
    /// Type-class lists hold `(r_class(c), c)` for every train assertion.
    pub fn build(
        vocab: &Vocabularies,
        triples: &[Triple],
        train_assertions: impl IntoIterator<Item = (EntityId, TypeId)>,
        classmap: &ClassMap,
        include_inverse: bool,
    ) -> Self {
        let n = vocab.entities.len();
        let mut relational = vec![Vec::new(); n];
        for t in triples {
            relational[t.head.index()].push((t.rel, t.tail));
            if include_inverse {
                relational[t.tail.index()].push((vocab.inverse(t.rel), t.head));
            }
        }
        let mut typeclass = vec![Vec::new(); n];
        for (e, ty) in train_assertions {
            typeclass[e.index()].push((classmap.class_relation(ty), ty));
        }
        Self {
            relational,
            typeclass,
            include_inverse,
        }
    }

    pub fn relational(&self, e: EntityId) -> &[(RelationId, EntityId)] {
        &self.relational[e.index()]
    }

    pub fn typeclass(&self, e: EntityId) -> &[(RelationId, TypeId)] {
        &self.typeclass[e.index()]
    }

    pub fn include_inverse(&self) -> bool {
        self.include_inverse
    }

    pub fn num_entities(&self) -> usize {
        self.relational.len()
    }

    /// Total number of directed relational neighbor entries.
    pub fn num_relational_entries(&self) -> usize {
        self.relational.iter().map(Vec::len).sum()
    }

    pub fn max_relational_degree(&self) -> usize {
        self.relational.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn max_typeclass_degree(&self) -> usize {
        self.typeclass.iter().map(Vec::len).max().unwrap_or(0)
    }
}
