use crate::kg::{EntityId, KnowledgeGraph, RelationId, TypeId};

/// What a word-embedding row stands for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Cls,
    Entity(EntityId),
    Relation(RelationId),
    Type(TypeId),
}

/// One id space over `[CLS] | entities | relations | types`; relations
/// include inverses, `has_type` and the class relations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenVocabulary {
    entities: usize,
    relations: usize,
    types: usize,
}

impl TokenVocabulary {
    pub const CLS: usize = 0;

    pub fn new(entities: usize, relations: usize, types: usize) -> Self {
        Self {
            entities,
            relations,
            types,
        }
    }

    pub fn for_graph(kg: &KnowledgeGraph) -> Self {
        let v = kg.vocab();
        Self::new(v.entities.len(), v.relations.len(), v.types.len())
    }

    pub fn len(&self) -> usize {
        1 + self.entities + self.relations + self.types
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn entity(&self, e: EntityId) -> usize {
        debug_assert!(e.index() < self.entities);
        1 + e.index()
    }

    pub fn relation(&self, r: RelationId) -> usize {
        debug_assert!(r.index() < self.relations);
        1 + self.entities + r.index()
    }

    pub fn ty(&self, t: TypeId) -> usize {
        debug_assert!(t.index() < self.types);
        1 + self.entities + self.relations + t.index()
    }

    pub fn kind(&self, id: usize) -> TokenKind {
        let e0 = 1;
        let r0 = e0 + self.entities;
        let t0 = r0 + self.relations;
        assert!(id < self.len(), "token id {id} out of range");
        if id == Self::CLS {
            TokenKind::Cls
        } else if id < r0 {
            TokenKind::Entity(EntityId::from_index(id - e0))
        } else if id < t0 {
            TokenKind::Relation(RelationId::from_index(id - r0))
        } else {
            TokenKind::Type(TypeId::from_index(id - t0))
        }
    }
}
