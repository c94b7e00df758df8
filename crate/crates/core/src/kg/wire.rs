//! The extraction wire format: one JSON object per case with `vertices_`
//! and `relations_` arrays, entity keys `id_`/`type_`/`label_` and relation
//! keys `id_`/`type_`/`from_`/`to_`.

use std::collections::{HashMap, HashSet};

use serde::Serialize;
use serde_json::{Map, Value};

use super::model::{Entity, EntityKind, IracGraph, Relation, RelationKind};
use super::validate::{check_endpoints, validate_graph, ValidationReport, ViolationCode};
use super::KgError;
use crate::repair::repair_json;

/// How [`parse_graph_json`] treats schema violations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ParseMode {
    /// Any violation rejects the document.
    Strict,
    /// Offending relations (and unrepresentable entities) are dropped and
    /// the surviving graph is returned together with the report.
    #[default]
    Lenient,
}

/// Parses one wire document into a graph.
///
/// Falls back to [`repair_json`] when the text is not a bare JSON object.
pub fn parse_graph_json(text: &str, case_id: &str, mode: ParseMode) -> Result<(IracGraph, ValidationReport), KgError> {
    let doc = load_object(text)?;
    let (graph, report) = graph_from_object(&doc, case_id);
    if mode == ParseMode::Strict && !report.is_valid_strict {
        return Err(KgError::InvalidGraph(report));
    }
    Ok((graph, report))
}

pub(crate) fn load_object(text: &str) -> Result<Map<String, Value>, KgError> {
    if let Ok(Value::Object(map)) = serde_json::from_str::<Value>(text.trim()) {
        return Ok(map);
    }
    let candidate = repair_json(text).map_err(|e| KgError::UnparseableDocument(e.to_string()))?;
    match serde_json::from_str::<Value>(&candidate) {
        Ok(Value::Object(map)) => Ok(map),
        Ok(_) => Err(KgError::UnparseableDocument("top-level value is not an object".into())),
        Err(e) => Err(KgError::UnparseableDocument(e.to_string())),
    }
}

/// Ids may arrive as strings or bare integers.
fn id_field(obj: &Map<String, Value>, key: &str) -> Option<String> {
    match obj.get(key)? {
        Value::String(s) if !s.is_empty() => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

fn str_field<'a>(obj: &'a Map<String, Value>, key: &str) -> Option<&'a str> {
    obj.get(key).and_then(Value::as_str)
}

fn array<'a>(doc: &'a Map<String, Value>, key: &str, report: &mut ValidationReport) -> &'a [Value] {
    match doc.get(key) {
        Some(Value::Array(items)) => items,
        Some(_) => {
            report.push(ViolationCode::MissingField, key, format!("{key} is not an array"));
            &[]
        }
        None => {
            report.push(ViolationCode::MissingField, key, format!("{key} is missing"));
            &[]
        }
    }
}

pub(crate) fn graph_from_object(doc: &Map<String, Value>, case_id: &str) -> (IracGraph, ValidationReport) {
    let mut report = ValidationReport::default();
    let mut graph = IracGraph::new(case_id);

    for (i, v) in array(doc, "vertices_", &mut report).iter().enumerate() {
        let pos = format!("vertices_[{i}]");
        let Some(obj) = v.as_object() else {
            report.push(ViolationCode::MissingField, &pos, "vertex is not an object".into());
            report.dropped_entities.push(pos);
            continue;
        };
        let Some(id) = id_field(obj, "id_") else {
            report.push(ViolationCode::MissingField, &pos, "vertex lacks id_".into());
            report.dropped_entities.push(pos);
            continue;
        };
        let kind = match str_field(obj, "type_") {
            None => {
                report.push(ViolationCode::MissingField, &id, "vertex lacks type_".into());
                None
            }
            Some(t) => match t.parse::<EntityKind>() {
                Ok(k) => Some(k),
                Err(_) => {
                    report.push(ViolationCode::UnknownKind, &id, format!("unknown entity type {t:?}"));
                    None
                }
            },
        };
        let label = match str_field(obj, "label_") {
            None => {
                report.push(ViolationCode::MissingField, &id, "vertex lacks label_".into());
                None
            }
            Some(l) if l.trim().is_empty() => {
                report.push(ViolationCode::EmptyLabel, &id, "empty label_".into());
                None
            }
            Some(l) => Some(l),
        };
        if graph.entities.iter().any(|e| e.id == id) {
            report.push(
                ViolationCode::DuplicateId,
                &id,
                format!("entity id {id:?} appears more than once"),
            );
            report.dropped_entities.push(id);
            continue;
        }
        match (kind, label) {
            (Some(kind), Some(label)) => graph.entities.push(Entity::new(id, kind, label)),
            _ => report.dropped_entities.push(id),
        }
    }

    let kinds: HashMap<&str, EntityKind> = graph.entities.iter().map(|e| (e.id.as_str(), e.kind)).collect();
    let mut seen: HashSet<String> = HashSet::new();
    let mut relations = Vec::new();

    for (i, v) in array(doc, "relations_", &mut report).iter().enumerate() {
        let pos = format!("relations_[{i}]");
        let Some(obj) = v.as_object() else {
            report.push(ViolationCode::MissingField, &pos, "relation is not an object".into());
            report.dropped_relations.push(pos);
            continue;
        };
        let Some(id) = id_field(obj, "id_") else {
            report.push(ViolationCode::MissingField, &pos, "relation lacks id_".into());
            report.dropped_relations.push(pos);
            continue;
        };
        let mut ok = true;
        let kind = match str_field(obj, "type_") {
            None => {
                report.push(ViolationCode::MissingField, &id, "relation lacks type_".into());
                None
            }
            Some(t) => match t.parse::<RelationKind>() {
                Ok(k) => Some(k),
                Err(_) => {
                    report.push(ViolationCode::UnknownKind, &id, format!("unknown relation type {t:?}"));
                    None
                }
            },
        };
        let from = id_field(obj, "from_");
        let to = id_field(obj, "to_");
        for (key, val) in [("from_", &from), ("to_", &to)] {
            if val.is_none() {
                report.push(ViolationCode::MissingField, &id, format!("relation lacks {key}"));
                ok = false;
            }
        }
        if !seen.insert(id.clone()) {
            report.push(
                ViolationCode::DuplicateId,
                &id,
                format!("relation id {id:?} appears more than once"),
            );
            report.dropped_relations.push(id);
            continue;
        }
        let (Some(kind), Some(from), Some(to), true) = (kind, from, to, ok) else {
            report.dropped_relations.push(id);
            continue;
        };
        if let Some((code, msg)) = check_endpoints(kind, &from, &to, &kinds) {
            report.push(code, &id, msg);
            report.dropped_relations.push(id);
            continue;
        }
        relations.push(Relation::new(id, kind, from, to));
    }
    graph.relations = relations;

    (graph, report.finish())
}

#[derive(Serialize)]
struct WireEntity<'a> {
    id_: &'a str,
    type_: &'static str,
    label_: &'a str,
}

#[derive(Serialize)]
struct WireRelation<'a> {
    id_: &'a str,
    type_: &'static str,
    from_: &'a str,
    to_: &'a str,
}

#[derive(Serialize)]
struct WireGraph<'a> {
    vertices_: Vec<WireEntity<'a>>,
    relations_: Vec<WireRelation<'a>>,
}

/// Emits the compact wire form in stored order. Rejects graphs that are not
/// strict-valid.
pub fn serialize_graph(graph: &IracGraph) -> Result<String, KgError> {
    let report = validate_graph(graph);
    if !report.is_valid_strict {
        return Err(KgError::InvalidGraph(report));
    }
    let wire = WireGraph {
        vertices_: graph
            .entities
            .iter()
            .map(|e| WireEntity {
                id_: &e.id,
                type_: e.kind.as_str(),
                label_: &e.label,
            })
            .collect(),
        relations_: graph
            .relations
            .iter()
            .map(|r| WireRelation {
                id_: &r.id,
                type_: r.kind.as_str(),
                from_: &r.from,
                to_: &r.to,
            })
            .collect(),
    };
    Ok(serde_json::to_string(&wire).expect("wire graph serializes"))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"vertices_":[
        {"id_":"I1","type_":"LegalIssue","label_":"Whether the contract was formed"},
        {"id_":"F1","type_":"MaterialFact","label_":"The parties exchanged signed letters"}],
      "relations_":[{"id_":"E1","type_":"ARISES_FROM","from_":"I1","to_":"F1"}]}"#;

    #[test]
    fn minimal_graph_parses_clean() {
        let (g, report) = parse_graph_json(MINIMAL, "c1", ParseMode::Strict).unwrap();
        assert_eq!(g.entities.len(), 2);
        assert_eq!(g.relations.len(), 1);
        assert!(report.violations.is_empty());
        assert_eq!(g.case_id, "c1");
    }

    #[test]
    fn minimal_round_trip() {
        let (g, _) = parse_graph_json(MINIMAL, "c1", ParseMode::Strict).unwrap();
        let text = serialize_graph(&g).unwrap();
        let (back, _) = parse_graph_json(&text, "c1", ParseMode::Strict).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn empty_graph_serializes_exactly() {
        let g = IracGraph::new("empty");
        assert_eq!(serialize_graph(&g).unwrap(), r#"{"vertices_":[],"relations_":[]}"#);
    }

    #[test]
    fn canonical_key_order() {
        let shuffled = r#"{"relations_":[{"to_":"F1","from_":"I1","type_":"ARISES_FROM","id_":"E1"}],
            "vertices_":[{"label_":"issue","type_":"LegalIssue","id_":"I1"},
                         {"type_":"MaterialFact","label_":"fact","id_":"F1"}]}"#;
        let (g, _) = parse_graph_json(shuffled, "c", ParseMode::Strict).unwrap();
        assert_eq!(
            serialize_graph(&g).unwrap(),
            concat!(
                r#"{"vertices_":[{"id_":"I1","type_":"LegalIssue","label_":"issue"},"#,
                r#"{"id_":"F1","type_":"MaterialFact","label_":"fact"}],"#,
                r#""relations_":[{"id_":"E1","type_":"ARISES_FROM","from_":"I1","to_":"F1"}]}"#
            )
        );
    }

    #[test]
    fn arises_from_out_of_rule_is_dropped_in_lenient_mode() {
        let doc = r#"{"vertices_":[
            {"id_":"R1","type_":"Rule","label_":"rule"},
            {"id_":"F1","type_":"MaterialFact","label_":"fact"}],
          "relations_":[{"id_":"E1","type_":"ARISES_FROM","from_":"R1","to_":"F1"}]}"#;
        let (g, report) = parse_graph_json(doc, "c", ParseMode::Lenient).unwrap();
        assert_eq!(report.codes(), vec![ViolationCode::EndpointKind]);
        assert_eq!(report.dropped_relations, vec!["E1"]);
        assert_eq!(g.entities.len(), 2);
        assert!(g.relations.is_empty());

        match parse_graph_json(doc, "c", ParseMode::Strict) {
            Err(KgError::InvalidGraph(r)) => assert_eq!(r, report),
            other => panic!("expected InvalidGraph, got {other:?}"),
        }
    }

    #[test]
    fn dangling_endpoint() {
        let doc = r#"{"vertices_":[{"id_":"I1","type_":"LegalIssue","label_":"issue"}],
          "relations_":[{"id_":"E1","type_":"ARISES_FROM","from_":"I1","to_":"F9"}]}"#;
        let (_, report) = parse_graph_json(doc, "c", ParseMode::Lenient).unwrap();
        assert_eq!(report.codes(), vec![ViolationCode::DanglingEndpoint]);
        assert_eq!(report.violations[0].subject_id, "E1");
    }

    #[test]
    fn unknown_kinds_and_missing_fields() {
        let doc = r#"{"vertices_":[
            {"id_":"X1","type_":"Holding","label_":"h"},
            {"type_":"Rule","label_":"no id"},
            {"id_":"R1","type_":"Rule"},
            {"id_":"R2","type_":"Rule","label_":"  "}],
          "relations_":[{"id_":"E1","type_":"OVERRULES","from_":"R1","to_":"X1"},
                        {"id_":"E2","type_":"ADDRESSES","from_":"R1"}]}"#;
        let (g, report) = parse_graph_json(doc, "c", ParseMode::Lenient).unwrap();
        assert!(g.entities.is_empty());
        assert!(g.relations.is_empty());
        assert_eq!(report.count(ViolationCode::UnknownKind), 2);
        assert_eq!(report.count(ViolationCode::MissingField), 3);
        assert_eq!(report.count(ViolationCode::EmptyLabel), 1);
        assert_eq!(report.dropped_entities.len(), 4);
        assert_eq!(report.dropped_relations, vec!["E1", "E2"]);
    }

    #[test]
    fn missing_arrays_are_reported() {
        let (g, report) = parse_graph_json("{}", "c", ParseMode::Lenient).unwrap();
        assert!(g.entities.is_empty());
        assert_eq!(report.count(ViolationCode::MissingField), 2);
    }

    #[test]
    fn fenced_document_is_repaired() {
        let fenced = format!("Here you go:\n```json\n{MINIMAL}\n```\n");
        let (g, report) = parse_graph_json(&fenced, "c", ParseMode::Strict).unwrap();
        assert_eq!(g.entities.len(), 2);
        assert!(report.is_valid_strict);
    }

    #[test]
    fn prose_is_unparseable() {
        let err = parse_graph_json("I'm sorry, I cannot help.", "c", ParseMode::Lenient).unwrap_err();
        assert!(matches!(err, KgError::UnparseableDocument(_)));
        let err = parse_graph_json("[1,2]", "c", ParseMode::Lenient).unwrap_err();
        assert!(matches!(err, KgError::UnparseableDocument(_)));
    }

    #[test]
    fn integer_ids_are_accepted() {
        let doc = r#"{"vertices_":[{"id_":1,"type_":"LegalIssue","label_":"i"},
            {"id_":2,"type_":"MaterialFact","label_":"f"}],
            "relations_":[{"id_":3,"type_":"ARISES_FROM","from_":1,"to_":2}]}"#;
        let (g, report) = parse_graph_json(doc, "c", ParseMode::Strict).unwrap();
        assert!(report.is_valid_strict);
        assert_eq!(g.relations[0].from, "1");
    }

    #[test]
    fn serialize_rejects_invalid_graph() {
        let mut g = IracGraph::new("c");
        g.relations.push(Relation::new("E1", RelationKind::LeadsTo, "R1", "C1"));
        assert!(matches!(serialize_graph(&g), Err(KgError::InvalidGraph(_))));
    }
}
