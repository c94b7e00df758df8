//! Randomized checks of traversal, preference set laws and the wire format
//! against brute-force relation scans.

use std::collections::BTreeSet;

use irac_kg::kg::{parse_graph_json, serialize_graph, EntityKind, IracGraph, ParseMode, RelationKind};
use irac_kg::pref::candidate_rejected;
use irac_kg::query::{
    all_rules, applicable_rules, get_related_facts, get_rules_via_address, get_rules_via_apply, legal_issues,
};
use irac_kg::synth::random_graph;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

type Ids = BTreeSet<String>;

fn scan(g: &IracGraph, kind: RelationKind, to: &str, want: EntityKind, reverse: bool) -> Ids {
    let mut out = Ids::new();
    for r in &g.relations {
        if r.kind != kind {
            continue;
        }
        let (anchor, other) = if reverse { (&r.from, &r.to) } else { (&r.to, &r.from) };
        if anchor != to {
            continue;
        }
        for e in &g.entities {
            if &e.id == other && e.kind == want {
                out.insert(e.id.clone());
            }
        }
    }
    out
}

fn ids<'a>(it: impl IntoIterator<Item = &'a str>) -> Ids {
    it.into_iter().map(String::from).collect()
}

fn graph(seed: u64) -> IracGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_graph(&mut rng, &format!("p{seed}"), 50)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn traversal_matches_brute_force(seed in any::<u64>()) {
        let g = graph(seed);
        let every_rule: Ids = g.entities.iter().filter(|e| e.kind == EntityKind::Rule).map(|e| e.id.clone()).collect();
        prop_assert_eq!(ids(all_rules(&g).ids()), every_rule.clone());
        for issue in legal_issues(&g) {
            let facts = scan(&g, RelationKind::ArisesFrom, &issue.id, EntityKind::MaterialFact, true);
            prop_assert_eq!(ids(get_related_facts(&g, &issue.id).unwrap().ids()), facts.clone());

            let mut expected = scan(&g, RelationKind::Addresses, &issue.id, EntityKind::Rule, false);
            prop_assert_eq!(ids(get_rules_via_address(&g, &issue.id).unwrap().ids()), expected.clone());
            for f in &facts {
                let via = scan(&g, RelationKind::AppliedTo, f, EntityKind::Rule, false);
                prop_assert_eq!(ids(get_rules_via_apply(&g, f).unwrap().ids()), via.clone());
                expected.extend(via);
            }
            let chosen = ids(applicable_rules(&g, &issue.id).unwrap().ids());
            prop_assert_eq!(&chosen, &expected);

            let rejected = ids(candidate_rejected(&g, &issue.id).unwrap().ids());
            prop_assert!(chosen.is_disjoint(&rejected));
            let union: Ids = chosen.union(&rejected).cloned().collect();
            prop_assert_eq!(union, every_rule.clone());
        }
    }

    #[test]
    fn wire_round_trip(seed in any::<u64>()) {
        let g = graph(seed);
        let text = serialize_graph(&g).unwrap();
        let (back, report) = parse_graph_json(&text, &g.case_id, ParseMode::Strict).unwrap();
        prop_assert!(report.violations.is_empty());
        prop_assert_eq!(&back, &g);
        prop_assert_eq!(serialize_graph(&back).unwrap(), text);
    }
}

#[test]
fn non_issue_ids_are_rejected() {
    let g = graph(11);
    for e in g.entities.iter().filter(|e| e.kind != EntityKind::LegalIssue) {
        assert!(get_related_facts(&g, &e.id).is_err());
        assert!(candidate_rejected(&g, &e.id).is_err());
    }
    for e in g.entities.iter().filter(|e| e.kind != EntityKind::MaterialFact) {
        assert!(get_rules_via_apply(&g, &e.id).is_err());
    }
}
