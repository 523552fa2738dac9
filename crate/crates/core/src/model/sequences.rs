use std::collections::HashMap;

use super::{ModuleFlags, RseMode, TokenVocabulary};
use crate::kg::{EntityId, KnowledgeGraph, NeighborSample, RelationId, TypeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SequenceKind {
    TypeclassLocal,
    RelationalLocal,
    Global,
    Context,
    RelationEnhancement,
}

/// One input position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Slot {
    Pad,
    /// A word-embedding row of the token vocabulary.
    Token(usize),
    /// The `[CLS]` output of local sequence `i`, counting type-class locals
    /// first and relational locals after.
    LocalOutput(usize),
    /// Enhanced embedding `i` replacing a relation token.
    Enhanced(usize),
}

/// Sequences of one kind packed to a common length.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SequenceBatch {
    pub kind: SequenceKind,
    pub seq_len: usize,
    pub slots: Vec<Slot>,
    pub positions: Vec<usize>,
    /// `true` on real tokens; always a prefix of every sequence.
    pub mask: Vec<bool>,
}

impl SequenceBatch {
    pub fn from_sequences(kind: SequenceKind, seqs: &[Vec<Slot>]) -> Self {
        let seq_len = seqs.iter().map(Vec::len).max().unwrap_or(0);
        let mut slots = Vec::with_capacity(seqs.len() * seq_len);
        let mut positions = Vec::with_capacity(seqs.len() * seq_len);
        let mut mask = Vec::with_capacity(seqs.len() * seq_len);
        for s in seqs {
            assert!(!s.is_empty(), "sequences are never empty");
            for i in 0..seq_len {
                let real = i < s.len();
                slots.push(if real { s[i] } else { Slot::Pad });
                positions.push(if real { i } else { 0 });
                mask.push(real);
            }
        }
        Self {
            kind,
            seq_len,
            slots,
            positions,
            mask,
        }
    }

    pub fn num_sequences(&self) -> usize {
        if self.seq_len == 0 {
            0
        } else {
            self.slots.len() / self.seq_len
        }
    }

    pub fn is_empty(&self) -> bool {
        self.num_sequences() == 0
    }

    /// The unpadded tokens of sequence `i`.
    pub fn sequence(&self, i: usize) -> &[Slot] {
        let row = &self.slots[i * self.seq_len..(i + 1) * self.seq_len];
        let len = self.mask[i * self.seq_len..(i + 1) * self.seq_len]
            .iter()
            .filter(|&&m| m)
            .count();
        &row[..len]
    }
}

/// Where one pooled score vector comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Source {
    TypeclassLocal(usize),
    RelationalLocal(usize),
    Global(usize),
    Context(usize),
    /// Stand-in for an entity with no other source: scores equal the head
    /// bias.
    BiasOnly,
}

/// Relation-enhancement sequences and the output rows aggregated for each.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Enhancement {
    pub batch: SequenceBatch,
    /// Packed output rows (relation token and type tokens) per sequence.
    pub groups: Vec<Vec<usize>>,
}

/// One entity with its (sampled) neighborhood.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntityInput {
    pub entity: EntityId,
    pub sample: NeighborSample,
}

impl EntityInput {
    pub fn full(kg: &KnowledgeGraph, entity: EntityId) -> Self {
        Self {
            entity,
            sample: NeighborSample::all(kg.neighbors(), entity),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlanOptions {
    pub modules: ModuleFlags,
    pub use_classes: bool,
    pub rse: RseMode,
    pub rse_type_cap: usize,
}

/// Every sequence needed to score a batch of entities.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BatchPlan {
    pub typeclass_local: SequenceBatch,
    pub relational_local: SequenceBatch,
    pub enhancement: Option<Enhancement>,
    pub global: Option<SequenceBatch>,
    pub context: Option<SequenceBatch>,
    /// Per entity, in pooling order.
    pub sources: Vec<Vec<Source>>,
}

impl BatchPlan {
    pub fn num_local_sequences(&self) -> usize {
        self.typeclass_local.num_sequences() + self.relational_local.num_sequences()
    }
}

struct Builder<'a> {
    kg: &'a KnowledgeGraph,
    tokens: TokenVocabulary,
    opts: PlanOptions,
    pairs: HashMap<(RelationId, EntityId), Option<usize>>,
    enhancement_seqs: Vec<Vec<Slot>>,
}

impl Builder<'_> {
    fn type_relation(&self, class_relation: RelationId) -> usize {
        if self.opts.use_classes {
            self.tokens.relation(class_relation)
        } else {
            self.tokens.relation(self.kg.vocab().has_type())
        }
    }

    fn typed(&self, rel: RelationId, ty: TypeId) -> [Slot; 2] {
        [Slot::Token(self.type_relation(rel)), Slot::Token(self.tokens.ty(ty))]
    }

    /// Slot for relation `r` of the pair `(r, f)`: enhanced when possible.
    fn relation_slot(&mut self, r: RelationId, f: EntityId) -> Slot {
        if self.opts.rse == RseMode::Off {
            return Slot::Token(self.tokens.relation(r));
        }
        if let Some(entry) = self.pairs.get(&(r, f)) {
            return entry.map_or(Slot::Token(self.tokens.relation(r)), Slot::Enhanced);
        }
        let typed = self.kg.neighbors().typeclass(f);
        let entry = if typed.is_empty() {
            None
        } else {
            let mut seq = vec![Slot::Token(self.tokens.relation(r))];
            for &(rc, c) in typed.iter().take(self.opts.rse_type_cap) {
                seq.extend(self.typed(rc, c));
            }
            self.enhancement_seqs.push(seq);
            Some(self.enhancement_seqs.len() - 1)
        };
        self.pairs.insert((r, f), entry);
        entry.map_or(Slot::Token(self.tokens.relation(r)), Slot::Enhanced)
    }
}

/// Builds all sequences for `inputs`; a pure function of its arguments.
pub fn build_plan(
    kg: &KnowledgeGraph,
    tokens: TokenVocabulary,
    inputs: &[EntityInput],
    opts: &PlanOptions,
) -> BatchPlan {
    let m = opts.modules;
    let need_locals = m.local || m.context;
    let mut b = Builder {
        kg,
        tokens,
        opts: *opts,
        pairs: HashMap::new(),
        enhancement_seqs: Vec::new(),
    };
    let cls = Slot::Token(TokenVocabulary::CLS);

    let mut tc_seqs = Vec::new();
    let mut rel_seqs = Vec::new();
    // Per entity: (first type-class local, count, first relational local, count).
    let mut local_ranges = Vec::with_capacity(inputs.len());
    for input in inputs {
        let (tc0, rel0) = (tc_seqs.len(), rel_seqs.len());
        if need_locals {
            for &(rc, c) in &input.sample.typeclass {
                let [r, t] = b.typed(rc, c);
                tc_seqs.push(vec![cls, r, t]);
            }
            for &(r, f) in &input.sample.relational {
                let rs = b.relation_slot(r, f);
                rel_seqs.push(vec![cls, rs, Slot::Token(tokens.entity(f))]);
            }
        }
        local_ranges.push((tc0, tc_seqs.len() - tc0, rel0, rel_seqs.len() - rel0));
    }
    let num_tc = tc_seqs.len();

    let global = m.global.then(|| {
        let seqs: Vec<Vec<Slot>> = inputs
            .iter()
            .map(|input| {
                let mut s = vec![cls];
                if input.sample.is_empty() {
                    s.push(Slot::Token(tokens.entity(input.entity)));
                }
                for &(rc, c) in &input.sample.typeclass {
                    s.extend(b.typed(rc, c));
                }
                for &(r, f) in &input.sample.relational {
                    let rs = b.relation_slot(r, f);
                    s.extend([rs, Slot::Token(tokens.entity(f))]);
                }
                s
            })
            .collect();
        SequenceBatch::from_sequences(SequenceKind::Global, &seqs)
    });

    let context = m.context.then(|| {
        let seqs: Vec<Vec<Slot>> = inputs
            .iter()
            .zip(&local_ranges)
            .map(|(input, &(tc0, ntc, rel0, nrel))| {
                let mut s = vec![cls, Slot::Token(tokens.entity(input.entity))];
                s.extend((tc0..tc0 + ntc).map(Slot::LocalOutput));
                s.extend((rel0..rel0 + nrel).map(|j| Slot::LocalOutput(num_tc + j)));
                s
            })
            .collect();
        SequenceBatch::from_sequences(SequenceKind::Context, &seqs)
    });

    let sources = local_ranges
        .iter()
        .enumerate()
        .map(|(i, &(tc0, ntc, rel0, nrel))| {
            let mut s = Vec::new();
            if m.local {
                s.extend((tc0..tc0 + ntc).map(Source::TypeclassLocal));
                s.extend((rel0..rel0 + nrel).map(Source::RelationalLocal));
            }
            if m.global {
                s.push(Source::Global(i));
            }
            if m.context {
                s.push(Source::Context(i));
            }
            if s.is_empty() {
                s.push(Source::BiasOnly);
            }
            s
        })
        .collect();

    let enhancement = (!b.enhancement_seqs.is_empty()).then(|| {
        let batch = SequenceBatch::from_sequences(SequenceKind::RelationEnhancement, &b.enhancement_seqs);
        let groups = b
            .enhancement_seqs
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let base = i * batch.seq_len;
                std::iter::once(base)
                    .chain((2..s.len()).step_by(2).map(|p| base + p))
                    .collect()
            })
            .collect();
        Enhancement { batch, groups }
    });

    BatchPlan {
        typeclass_local: SequenceBatch::from_sequences(SequenceKind::TypeclassLocal, &tc_seqs),
        relational_local: SequenceBatch::from_sequences(SequenceKind::RelationalLocal, &rel_seqs),
        enhancement,
        global,
        context,
        sources,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::synthetic::tiny_kg;

    fn opts(modules: ModuleFlags) -> PlanOptions {
        PlanOptions {
            modules,
            use_classes: true,
            rse: RseMode::Off,
            rse_type_cap: 3,
        }
    }

    fn tokens_of(kg: &KnowledgeGraph, seq: &[Slot]) -> Vec<String> {
        let t = TokenVocabulary::for_graph(kg);
        let v = kg.vocab();
        seq.iter()
            .map(|s| match *s {
                Slot::Token(id) => match t.kind(id) {
                    super::super::TokenKind::Cls => "[CLS]".to_string(),
                    super::super::TokenKind::Entity(e) => v.entities.label(e.index()).to_string(),
                    super::super::TokenKind::Relation(r) => v.relations.label(r.index()).to_string(),
                    super::super::TokenKind::Type(ty) => v.types.label(ty.index()).to_string(),
                },
                other => format!("{other:?}"),
            })
            .collect()
    }

    #[test]
    fn packs_and_pads() {
        let b = SequenceBatch::from_sequences(
            SequenceKind::Global,
            &[vec![Slot::Token(0), Slot::Token(5)], vec![Slot::Token(0)]],
        );
        assert_eq!(b.seq_len, 2);
        assert_eq!(b.num_sequences(), 2);
        assert_eq!(b.mask, vec![true, true, true, false]);
        assert_eq!(b.positions, vec![0, 1, 0, 0]);
        assert_eq!(b.sequence(1), &[Slot::Token(0)]);
    }

    #[test]
    fn local_global_and_context_layout() {
        let kg = tiny_kg();
        let a = kg.vocab().entity("a").unwrap();
        let input = EntityInput::full(&kg, a);
        let plan = build_plan(&kg, TokenVocabulary::for_graph(&kg), &[input.clone()], &opts(ModuleFlags::ALL));
        let n = input.sample.typeclass.len();
        let m = input.sample.relational.len();
        assert_eq!(plan.typeclass_local.num_sequences(), n);
        assert_eq!(plan.relational_local.num_sequences(), m);
        assert_eq!(plan.sources[0].len(), n + m + 2);
        assert!(matches!(plan.sources[0][0], Source::TypeclassLocal(0)));
        assert!(matches!(plan.sources[0][n], Source::RelationalLocal(0)));

        let g = plan.global.as_ref().unwrap();
        assert_eq!(g.sequence(0).len(), 1 + 2 * n + 2 * m);
        let ctx = plan.context.as_ref().unwrap();
        assert_eq!(ctx.sequence(0).len(), 2 + n + m);
        assert_eq!(ctx.sequence(0)[2 + n], Slot::LocalOutput(n));

        let first_rel = tokens_of(&kg, plan.relational_local.sequence(0));
        let (r, f) = input.sample.relational[0];
        assert_eq!(
            first_rel,
            vec![
                "[CLS]".to_string(),
                kg.vocab().relations.label(r.index()).to_string(),
                kg.vocab().entities.label(f.index()).to_string()
            ]
        );
    }

    #[test]
    fn class_rewriting_controls_relation_tokens() {
        let kg = tiny_kg();
        let inputs: Vec<EntityInput> = (0..kg.num_entities())
            .map(|i| EntityInput::full(&kg, EntityId::from_index(i)))
            .collect();
        let t = TokenVocabulary::for_graph(&kg);
        let has_type = Slot::Token(t.relation(kg.vocab().has_type()));
        let class_rels: Vec<Slot> = kg
            .classmap()
            .class_to_relation
            .iter()
            .map(|&r| Slot::Token(t.relation(r)))
            .collect();
        for use_classes in [true, false] {
            let o = PlanOptions {
                use_classes,
                ..opts(ModuleFlags::ALL)
            };
            let plan = build_plan(&kg, t, &inputs, &o);
            let all: Vec<Slot> = [&plan.typeclass_local, plan.global.as_ref().unwrap()]
                .iter()
                .flat_map(|b| b.slots.clone())
                .collect();
            assert_eq!(all.contains(&has_type), !use_classes);
            assert_eq!(class_rels.iter().any(|c| all.contains(c)), use_classes);
        }
    }

    #[test]
    fn disabled_modules_contribute_no_sources() {
        let kg = tiny_kg();
        let inputs: Vec<EntityInput> = (0..kg.num_entities())
            .map(|i| EntityInput::full(&kg, EntityId::from_index(i)))
            .collect();
        let t = TokenVocabulary::for_graph(&kg);
        for flags in ModuleFlags::combinations() {
            let plan = build_plan(&kg, t, &inputs, &opts(flags));
            for (i, input) in inputs.iter().enumerate() {
                let locals = input.sample.typeclass.len() + input.sample.relational.len();
                let expected = usize::from(flags.local) * locals
                    + usize::from(flags.global)
                    + usize::from(flags.context);
                assert_eq!(plan.sources[i].len(), expected.max(1), "{flags:?}");
            }
            assert_eq!(plan.global.is_some(), flags.global);
            assert_eq!(plan.context.is_some(), flags.context);
        }
    }

    #[test]
    fn isolated_entity_uses_bare_sequences() {
        let kg = tiny_kg();
        let a = kg.vocab().entity("a").unwrap();
        let input = EntityInput {
            entity: a,
            sample: NeighborSample::default(),
        };
        let t = TokenVocabulary::for_graph(&kg);
        let plan = build_plan(&kg, t, &[input], &opts(ModuleFlags::ALL));
        let bare = vec![Slot::Token(0), Slot::Token(t.entity(a))];
        assert_eq!(plan.global.unwrap().sequence(0), bare.as_slice());
        assert_eq!(plan.context.unwrap().sequence(0), bare.as_slice());
        assert_eq!(plan.sources[0], vec![Source::Global(0), Source::Context(0)]);

        let only_local = ModuleFlags {
            local: true,
            global: false,
            context: false,
        };
        let input = EntityInput {
            entity: a,
            sample: NeighborSample::default(),
        };
        let plan = build_plan(&kg, t, &[input], &opts(only_local));
        assert_eq!(plan.sources[0], vec![Source::BiasOnly]);
    }

    #[test]
    fn enhancement_sequences() {
        let kg = tiny_kg();
        let a = kg.vocab().entity("a").unwrap();
        let input = EntityInput::full(&kg, a);
        let t = TokenVocabulary::for_graph(&kg);
        let o = PlanOptions {
            rse: RseMode::Max,
            rse_type_cap: 1,
            ..opts(ModuleFlags::ALL)
        };
        let plan = build_plan(&kg, t, &[input.clone()], &o);
        let enh = plan.enhancement.expect("neighbors of a are typed");
        for (i, seq) in (0..enh.batch.num_sequences()).map(|i| (i, enh.batch.sequence(i))) {
            assert!(seq.len() == 3, "cap 1 gives [r, r_class, c]");
            assert_eq!(enh.groups[i], vec![i * 3, i * 3 + 2]);
        }
        for (j, &(_, f)) in input.sample.relational.iter().enumerate() {
            let slot = plan.relational_local.sequence(j)[1];
            let typed = !kg.neighbors().typeclass(f).is_empty();
            assert_eq!(matches!(slot, Slot::Enhanced(_)), typed);
        }
        let again = build_plan(&kg, t, &[input], &o);
        assert_eq!(again.enhancement, Some(enh));
    }
}
