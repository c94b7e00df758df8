//! Traversal primitives over a single case graph: facts of an issue, rules
//! reached through the apply path, rules reached through the address path,
//! and their union.

use std::collections::BTreeMap;

use crate::kg::{Entity, EntityKind, IracGraph, RelationKind};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum QueryError {
    #[error("{0:?} is not a LegalIssue in this graph")]
    NotAnIssue(String),
    #[error("{0:?} is not a MaterialFact in this graph")]
    NotAFact(String),
}

macro_rules! entity_set {
    ($(#[$doc:meta])* $name:ident) => {
        $(#[$doc])*
        #[derive(Debug, Clone, PartialEq, Eq, Default)]
        pub struct $name(BTreeMap<String, Entity>);

        impl $name {
            pub fn iter(&self) -> impl Iterator<Item = &Entity> {
                self.0.values()
            }

            pub fn ids(&self) -> Vec<&str> {
                self.0.keys().map(String::as_str).collect()
            }

            pub fn labels(&self) -> Vec<&str> {
                self.0.values().map(|e| e.label.as_str()).collect()
            }

            pub fn len(&self) -> usize {
                self.0.len()
            }

            pub fn is_empty(&self) -> bool {
                self.0.is_empty()
            }

            pub fn contains(&self, id: &str) -> bool {
                self.0.contains_key(id)
            }

            pub fn insert(&mut self, entity: Entity) {
                self.0.entry(entity.id.clone()).or_insert(entity);
            }

            pub fn union(mut self, other: &$name) -> $name {
                for e in other.iter() {
                    self.insert(e.clone());
                }
                self
            }

            pub fn difference(&self, other: &$name) -> $name {
                $name(
                    self.0
                        .iter()
                        .filter(|(id, _)| !other.contains(id))
                        .map(|(id, e)| (id.clone(), e.clone()))
                        .collect(),
                )
            }
        }

        impl FromIterator<Entity> for $name {
            fn from_iter<T: IntoIterator<Item = Entity>>(iter: T) -> Self {
                let mut set = $name::default();
                for e in iter {
                    set.insert(e);
                }
                set
            }
        }
    };
}

entity_set!(
    /// MaterialFact entities ordered by ascending id.
    FactSet
);
entity_set!(
    /// Rule entities ordered by ascending id.
    RuleSet
);

fn require(graph: &IracGraph, id: &str, kind: EntityKind) -> Option<()> {
    graph.entity(id).filter(|e| e.kind == kind).map(|_| ())
}

fn require_issue(graph: &IracGraph, issue_id: &str) -> Result<(), QueryError> {
    require(graph, issue_id, EntityKind::LegalIssue).ok_or_else(|| QueryError::NotAnIssue(issue_id.to_string()))
}

/// Entities of `want` kind on the far side of `kind` edges. `outgoing`
/// selects edges leaving `anchor` (anchor is the source) versus entering it.
fn neighbours<'g>(
    graph: &'g IracGraph,
    anchor: &str,
    kind: RelationKind,
    outgoing: bool,
    want: EntityKind,
) -> impl Iterator<Item = Entity> + 'g {
    let anchor = anchor.to_string();
    graph
        .relations_of(kind)
        .filter_map(move |r| {
            let (near, far) = if outgoing { (&r.from, &r.to) } else { (&r.to, &r.from) };
            (*near == anchor).then_some(far.as_str())
        })
        .filter_map(move |id| graph.entity(id))
        .filter(move |e| e.kind == want)
        .cloned()
}

/// Facts the issue arises from.
pub fn get_related_facts(graph: &IracGraph, issue_id: &str) -> Result<FactSet, QueryError> {
    require_issue(graph, issue_id)?;
    Ok(neighbours(
        graph,
        issue_id,
        RelationKind::ArisesFrom,
        true,
        EntityKind::MaterialFact,
    )
    .collect())
}

/// Rules applied to the fact.
pub fn get_rules_via_apply(graph: &IracGraph, fact_id: &str) -> Result<RuleSet, QueryError> {
    require(graph, fact_id, EntityKind::MaterialFact).ok_or_else(|| QueryError::NotAFact(fact_id.to_string()))?;
    Ok(neighbours(graph, fact_id, RelationKind::AppliedTo, false, EntityKind::Rule).collect())
}

/// Rules that address the issue directly.
pub fn get_rules_via_address(graph: &IracGraph, issue_id: &str) -> Result<RuleSet, QueryError> {
    require_issue(graph, issue_id)?;
    Ok(neighbours(graph, issue_id, RelationKind::Addresses, false, EntityKind::Rule).collect())
}

/// Union of the rules applied to the issue's facts and the rules addressing
/// the issue.
pub fn applicable_rules(graph: &IracGraph, issue_id: &str) -> Result<RuleSet, QueryError> {
    let facts = get_related_facts(graph, issue_id)?;
    let mut rules = RuleSet::default();
    for f in facts.iter() {
        rules = rules.union(&get_rules_via_apply(graph, &f.id)?);
    }
    Ok(rules.union(&get_rules_via_address(graph, issue_id)?))
}

pub fn all_rules(graph: &IracGraph) -> RuleSet {
    graph.entities_of(EntityKind::Rule).cloned().collect()
}

/// Issue ids of the graph in ascending order.
pub fn legal_issues(graph: &IracGraph) -> Vec<&Entity> {
    let mut issues: Vec<&Entity> = graph.entities_of(EntityKind::LegalIssue).collect();
    issues.sort_by(|a, b| a.id.cmp(&b.id));
    issues.dedup_by(|a, b| a.id == b.id);
    issues
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::fixture_a;
    use crate::kg::{parse_graph_json, serialize_graph, ParseMode, Relation};

    #[test]
    fn fixture_a_traversals() {
        let g = fixture_a();
        assert_eq!(get_related_facts(&g, "I1").unwrap().ids(), ["F1", "F2"]);
        assert_eq!(get_rules_via_apply(&g, "F1").unwrap().ids(), ["R1"]);
        assert!(get_rules_via_apply(&g, "F2").unwrap().is_empty());
        assert_eq!(get_rules_via_address(&g, "I1").unwrap().ids(), ["R2"]);
        assert_eq!(applicable_rules(&g, "I1").unwrap().ids(), ["R1", "R2"]);
        assert_eq!(all_rules(&g).ids(), ["R1", "R2", "R3"]);
    }

    #[test]
    fn wrong_kind_arguments() {
        let g = fixture_a();
        assert_eq!(get_related_facts(&g, "F1"), Err(QueryError::NotAnIssue("F1".into())));
        assert_eq!(get_rules_via_apply(&g, "I1"), Err(QueryError::NotAFact("I1".into())));
        assert!(applicable_rules(&g, "nope").is_err());
    }

    #[test]
    fn isolated_issue_is_empty_everywhere() {
        let mut g = fixture_a();
        g.entities
            .push(Entity::new("I2", EntityKind::LegalIssue, "Whether damages are capped."));
        assert!(get_related_facts(&g, "I2").unwrap().is_empty());
        assert!(get_rules_via_address(&g, "I2").unwrap().is_empty());
        assert!(applicable_rules(&g, "I2").unwrap().is_empty());
    }

    #[test]
    fn rule_reached_by_both_paths_appears_once() {
        let mut g = fixture_a();
        g.relations
            .push(Relation::new("E7", RelationKind::Addresses, "R1", "I1"));
        assert_eq!(applicable_rules(&g, "I1").unwrap().ids(), ["R1", "R2"]);
    }

    #[test]
    fn lenient_dropped_relation_behaves_as_absent() {
        let clean = fixture_a();
        // ADDRESSES from R3 into a fact breaches the endpoint table
        let with_bad = serialize_graph(&clean).unwrap().replace(
            r#""relations_":["#,
            r#""relations_":[{"id_":"E7","type_":"ADDRESSES","from_":"R3","to_":"F1"},"#,
        );
        let (parsed, report) = parse_graph_json(&with_bad, "fixture-a", ParseMode::Lenient).unwrap();
        assert_eq!(report.dropped_relations, vec!["E7"]);
        assert_eq!(
            get_rules_via_address(&parsed, "I1").unwrap(),
            get_rules_via_address(&clean, "I1").unwrap()
        );
        assert_eq!(parsed, clean);
    }

    #[test]
    fn no_rules() {
        let mut g = fixture_a();
        g.entities.retain(|e| e.kind != EntityKind::Rule);
        assert!(all_rules(&g).is_empty());
    }
}
