use indexmap::IndexSet;
use sha2::{Digest, Sha256};

use super::{ClassId, EntityId, RelationId, TypeId};

/// Bijective label <-> dense id table.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocab {
    labels: IndexSet<String>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the id of `label`, registering it if needed.
    pub fn intern(&mut self, label: &str) -> usize {
        if let Some(i) = self.labels.get_index_of(label) {
            return i;
        }
        self.labels.insert_full(label.to_owned()).0
    }

    /// Registers a label that must not exist yet.
    pub fn insert_new(&mut self, label: String) -> Option<usize> {
        let (i, fresh) = self.labels.insert_full(label);
        fresh.then_some(i)
    }

    pub fn get(&self, label: &str) -> Option<usize> {
        self.labels.get_index_of(label)
    }

    pub fn label(&self, id: usize) -> &str {
        &self.labels[id]
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> + '_ {
        self.labels.iter().map(String::as_str)
    }

    /// SHA-256 over the labels in id order.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for l in &self.labels {
            h.update((l.len() as u64).to_le_bytes());
            h.update(l.as_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// All label tables of a knowledge graph.
///
/// Relation ids are laid out as `[dataset relations | inverses | has_type |
/// class relations]`, so class relations never share ids with dataset
/// relations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabularies {
    pub entities: Vocab,
    pub relations: Vocab,
    pub types: Vocab,
    pub classes: Vocab,
    pub(crate) num_base_relations: usize,
}

pub(crate) const HAS_TYPE: &str = "has_type";

pub(crate) fn inverse_label(label: &str) -> String {
    format!("{label}^-1")
}

pub(crate) fn class_relation_label(class: &str) -> String {
    format!("belongs_class_{class}")
}

impl Vocabularies {
    /// Number of relations present in the dataset, excluding synthesized ones.
    pub fn num_base_relations(&self) -> usize {
        self.num_base_relations
    }

    pub fn inverse(&self, r: RelationId) -> RelationId {
        let n = self.num_base_relations;
        let i = r.index();
        assert!(i < 2 * n, "relation {i} has no inverse");
        RelationId::from_index(if i < n { i + n } else { i - n })
    }

    pub fn is_inverse(&self, r: RelationId) -> bool {
        (self.num_base_relations..2 * self.num_base_relations).contains(&r.index())
    }

    pub fn has_type(&self) -> RelationId {
        RelationId::from_index(2 * self.num_base_relations)
    }

    pub fn entity(&self, label: &str) -> Option<EntityId> {
        self.entities.get(label).map(EntityId::from_index)
    }

    pub fn relation(&self, label: &str) -> Option<RelationId> {
        self.relations.get(label).map(RelationId::from_index)
    }

    pub fn ty(&self, label: &str) -> Option<TypeId> {
        self.types.get(label).map(TypeId::from_index)
    }

    pub fn class(&self, label: &str) -> Option<ClassId> {
        self.classes.get(label).map(ClassId::from_index)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn intern_is_dense_and_idempotent() {
        let mut v = Vocab::new();
        assert_eq!(v.intern("a"), 0);
        assert_eq!(v.intern("b"), 1);
        assert_eq!(v.intern("a"), 0);
        assert_eq!(v.len(), 2);
        assert_eq!(v.label(1), "b");
        assert!(v.insert_new("a".into()).is_none());
    }

    #[test]
    fn fingerprint_depends_on_order() {
        let mut a = Vocab::new();
        a.intern("x");
        a.intern("y");
        let mut b = Vocab::new();
        b.intern("y");
        b.intern("x");
        assert_ne!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.fingerprint(), a.clone().fingerprint());
    }
}
