//! Entity-typing datasets: vocabularies, class rewriting, neighbor indexing,
//! sampling and ablation utilities.

mod classes;
mod graph;
mod loader;
mod neighbors;
mod sampling;
pub mod synthetic;
mod vocab;

pub use classes::{extract_classes, ClassMap, ClassRule};
pub use graph::{DatasetStats, KgBuilder, KnowledgeGraph, RawAssertion, RawTriple};
pub use loader::{
    load_dataset, tuples_file, write_dataset, LoadOptions, UnknownEntityPolicy, CLASSMAP_FILE,
    TRIPLES_FILE,
};
pub use neighbors::NeighborIndex;
pub use sampling::{drop_neighbors, sample_neighbors, DropMode, NeighborSample};
pub use vocab::{Vocab, Vocabularies};

use serde::{Deserialize, Serialize};

macro_rules! dense_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        pub struct $name(pub u32);

        impl $name {
            #[inline]
            pub fn index(self) -> usize {
                self.0 as usize
            }

            #[inline]
            pub fn from_index(i: usize) -> Self {
                Self(u32::try_from(i).expect("id exceeds u32 range"))
            }
        }
    };
}

dense_id!(
    /// Dense entity id.
    EntityId
);
dense_id!(
    /// Dense relation id. Covers dataset relations, their inverses,
    /// `has_type` and one class relation per class.
    RelationId
);
dense_id!(
    /// Dense type id (the label space scored by the model).
    TypeId
);
dense_id!(
    /// Dense class id (root grouping of type labels).
    ClassId
);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Triple {
    pub head: EntityId,
    pub rel: RelationId,
    pub tail: EntityId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }

    pub(crate) fn slot(self) -> usize {
        self as usize
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}` (expected train|valid|test)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TypeAssertion {
    pub entity: EntityId,
    pub ty: TypeId,
    pub split: Split,
}
