//! Small generated graphs with known structure, used for overfit checks,
//! gradient checks and benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{KgBuilder, KnowledgeGraph, LoadOptions, Split};

/// Parameters of the generated toy graph.
#[derive(Debug, Clone)]
pub struct ToyKgConfig {
    pub entities: usize,
    pub relations: usize,
    /// Probability that an entity is held out of training.
    pub held_out: f64,
    pub seed: u64,
}

impl Default for ToyKgConfig {
    fn default() -> Self {
        Self {
            entities: 30,
            relations: 5,
            held_out: 0.2,
            seed: 17,
        }
    }
}

/// Number of entities acting as hubs (targets of the `hub` type rule).
const HUBS: usize = 2;

/// Type labels of the toy graph: one per relation, then three derived ones.
pub fn toy_type_labels(relations: usize) -> Vec<String> {
    let mut labels: Vec<String> = (0..relations).map(|r| format!("/rel/uses_r{r}")).collect();
    labels.push("/hub/linked".into());
    labels.push("/combo/r0_and_r1".into());
    labels.push("/combo/r2_and_r3".into());
    labels
}

/// Builds a graph whose type labels are a deterministic function of each
/// entity's outgoing relational neighbors:
///
/// * `/rel/uses_rK`  iff the entity has an outgoing `rK` edge,
/// * `/hub/linked`   iff some outgoing edge ends in a hub entity,
/// * `/combo/r0_and_r1` iff it has both `r0` and `r1` edges,
/// * `/combo/r2_and_r3` iff it has both `r2` and `r3` edges.
///
/// A `held_out` fraction of the non-hub entities moves with all of its
/// assertions to the valid and test splits (alternating); every type keeps at
/// least one train assertion.
pub fn toy_kg(cfg: &ToyKgConfig) -> KnowledgeGraph {
    assert!(cfg.relations >= 2 && cfg.entities > HUBS + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let labels = toy_type_labels(cfg.relations);
    let name = |i: usize| format!("e{i:02}");

    let mut b = KgBuilder::new(LoadOptions::default());
    let mut types_of: Vec<Vec<usize>> = vec![Vec::new(); cfg.entities];
    for (e, types) in types_of.iter_mut().enumerate() {
        let degree = rng.random_range(1..=3usize);
        let mut rels: Vec<usize> = Vec::new();
        while rels.len() < degree {
            let r = rng.random_range(0..cfg.relations);
            if !rels.contains(&r) {
                rels.push(r);
            }
        }
        let mut hub = false;
        for &r in &rels {
            let mut t = rng.random_range(0..cfg.entities);
            while t == e {
                t = rng.random_range(0..cfg.entities);
            }
            hub |= t < HUBS;
            b.triple(&name(e), &format!("r{r}"), &name(t));
        }
        types.extend(rels.iter().copied());
        if hub {
            types.push(cfg.relations);
        }
        if rels.contains(&0) && rels.contains(&1) {
            types.push(cfg.relations + 1);
        }
        if rels.contains(&2) && rels.contains(&3) {
            types.push(cfg.relations + 2);
        }
    }

    // Hold out whole entities so that training labels never contradict the
    // rule (a held-out assertion of a training entity would be a false
    // negative). Hubs always stay in training.
    let mut held: Vec<bool> = (0..cfg.entities)
        .map(|e| e >= HUBS && rng.random_bool(cfg.held_out))
        .collect();
    // Every type keeps at least one train assertion.
    for ty in 0..labels.len() {
        let covered = |held: &[bool]| (0..cfg.entities).any(|e| !held[e] && types_of[e].contains(&ty));
        if !covered(&held) {
            if let Some(e) = (0..cfg.entities).find(|&e| held[e] && types_of[e].contains(&ty)) {
                held[e] = false;
            }
        }
    }
    let mut held_count = 0usize;
    for e in 0..cfg.entities {
        let split = if held[e] {
            held_count += 1;
            if held_count % 2 == 1 {
                Split::Test
            } else {
                Split::Valid
            }
        } else {
            Split::Train
        };
        for &ty in &types_of[e] {
            b.assertion(split, &name(e), &labels[ty]);
        }
    }
    b.build().expect("toy graph is well formed")
}

/// A three-entity graph touching every neighbor kind; the default fixture for
/// whole-model gradient checks.
pub fn tiny_kg() -> KnowledgeGraph {
    let mut b = KgBuilder::new(LoadOptions::default());
    b.triple("a", "p", "b")
        .triple("b", "q", "c")
        .triple("c", "p", "a")
        .triple("a", "q", "c")
        .assertion(Split::Train, "a", "/x/t1")
        .assertion(Split::Train, "a", "/y/t3")
        .assertion(Split::Train, "b", "/x/t2")
        .assertion(Split::Train, "c", "/x/t1")
        .assertion(Split::Train, "c", "/y/t4")
        .assertion(Split::Valid, "b", "/y/t3")
        .assertion(Split::Test, "c", "/x/t2");
    b.build().expect("tiny graph is well formed")
}
