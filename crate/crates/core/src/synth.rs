//! Random schema-valid graphs for property tests and benchmarks.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::kg::{Entity, EntityKind, IracGraph, Relation, RelationKind};

const WORDS: &[&str] = &[
    "plaintiff",
    "defendant",
    "duty",
    "breach",
    "contract",
    "negligence",
    "store",
    "floor",
    "warning",
    "statute",
    "appeal",
    "court",
    "damages",
    "injury",
    "notice",
    "tenant",
    "lease",
    "\"quoted\"",
    "café",
    "§ 2-314",
    "A&B",
    "<tag>",
    "it's",
    "liability",
    "invitee",
    "hazard",
    "employer",
];

/// Kinds drawn for new entities, weighted toward the IRAC core.
const KIND_WEIGHTS: &[(EntityKind, u32)] = &[
    (EntityKind::MaterialFact, 6),
    (EntityKind::LegalIssue, 3),
    (EntityKind::Rule, 5),
    (EntityKind::Conclusion, 2),
    (EntityKind::CitedCase, 2),
    (EntityKind::Statute, 1),
    (EntityKind::Regulation, 1),
    (EntityKind::Case, 1),
];

fn pick_kind(rng: &mut impl Rng) -> EntityKind {
    let total: u32 = KIND_WEIGHTS.iter().map(|(_, w)| w).sum();
    let mut x = rng.random_range(0..total);
    for (k, w) in KIND_WEIGHTS {
        if x < *w {
            return *k;
        }
        x -= w;
    }
    EntityKind::MaterialFact
}

fn label(rng: &mut impl Rng) -> String {
    let n = rng.random_range(1..=8);
    (0..n)
        .map(|_| *WORDS.choose(rng).expect("non-empty"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// A valid graph of 1 to `max_entities` entities. Relation count is up to
/// twice the entity count; ids are unique and every relation obeys the
/// endpoint table.
pub fn random_graph(rng: &mut impl Rng, case_id: &str, max_entities: usize) -> IracGraph {
    let mut g = IracGraph::new(case_id);
    let n = rng.random_range(1..=max_entities.max(1));
    for i in 0..n {
        let kind = pick_kind(rng);
        g.entities
            .push(Entity::new(format!("{}{i}", &kind.as_str()[..1]), kind, label(rng)));
    }
    let attempts = rng.random_range(0..=2 * n);
    for _ in 0..attempts {
        let kind = *RelationKind::ALL.choose(rng).expect("non-empty");
        let rule = kind.endpoint_rule();
        let sources: Vec<&Entity> = g.entities.iter().filter(|e| rule.sources.contains(&e.kind)).collect();
        let targets: Vec<&Entity> = g.entities.iter().filter(|e| rule.targets.contains(&e.kind)).collect();
        let (Some(from), Some(to)) = (sources.choose(rng), targets.choose(rng)) else {
            continue;
        };
        let rel = Relation::new(format!("E{}", g.relations.len()), kind, from.id.clone(), to.id.clone());
        g.relations.push(rel);
    }
    g
}

/// `count` graphs from one seed, with case ids `synth-0000`, `synth-0001`, ...
pub fn random_graphs(seed: u64, count: usize, max_entities: usize) -> Vec<IracGraph> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| random_graph(&mut rng, &format!("synth-{i:04}"), max_entities))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::validate_graph;

    #[test]
    fn graphs_are_valid_and_bounded() {
        for g in random_graphs(3, 300, 50) {
            assert!(!g.entities.is_empty() && g.entities.len() <= 50);
            let r = validate_graph(&g);
            assert!(r.is_valid_strict, "{:?}", r.violations);
        }
    }

    #[test]
    fn seeded() {
        assert_eq!(random_graphs(9, 5, 20), random_graphs(9, 5, 20));
    }
}
