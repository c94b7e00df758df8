use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::model::{EntityKind, IracGraph};

/// Closed set of schema violation codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ViolationCode {
    DuplicateId,
    DanglingEndpoint,
    EndpointKind,
    UnknownKind,
    MissingField,
    EmptyLabel,
}

impl fmt::Display for ViolationCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ViolationCode::DuplicateId => "DUPLICATE_ID",
            ViolationCode::DanglingEndpoint => "DANGLING_ENDPOINT",
            ViolationCode::EndpointKind => "ENDPOINT_KIND",
            ViolationCode::UnknownKind => "UNKNOWN_KIND",
            ViolationCode::MissingField => "MISSING_FIELD",
            ViolationCode::EmptyLabel => "EMPTY_LABEL",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub code: ViolationCode,
    /// Entity or relation id, or a positional reference such as
    /// `vertices_[3]` when the item has no usable id.
    pub subject_id: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    pub dropped_relations: Vec<String>,
    /// Wire entities that could not be represented (no id, unknown type,
    /// empty label, repeated id). Always empty for in-memory validation.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dropped_entities: Vec<String>,
    pub is_valid_strict: bool,
}

impl ValidationReport {
    pub(crate) fn push(&mut self, code: ViolationCode, subject: impl Into<String>, message: String) {
        self.violations.push(Violation {
            code,
            subject_id: subject.into(),
            message,
        });
    }

    pub(crate) fn finish(mut self) -> Self {
        self.is_valid_strict = self.violations.is_empty();
        self
    }

    pub fn codes(&self) -> Vec<ViolationCode> {
        self.violations.iter().map(|v| v.code).collect()
    }

    pub fn count(&self, code: ViolationCode) -> usize {
        self.violations.iter().filter(|v| v.code == code).count()
    }
}

/// Re-checks every graph invariant on an in-memory graph.
pub fn validate_graph(graph: &IracGraph) -> ValidationReport {
    let mut report = ValidationReport::default();
    let mut kinds: HashMap<&str, EntityKind> = HashMap::new();

    for (i, e) in graph.entities.iter().enumerate() {
        if e.id.is_empty() {
            report.push(
                ViolationCode::MissingField,
                format!("entities[{i}]"),
                "entity id is empty".into(),
            );
            continue;
        }
        if kinds.contains_key(e.id.as_str()) {
            report.push(
                ViolationCode::DuplicateId,
                &e.id,
                format!("entity id {:?} appears more than once", e.id),
            );
        } else {
            kinds.insert(&e.id, e.kind);
        }
        if e.label.trim().is_empty() {
            report.push(
                ViolationCode::EmptyLabel,
                &e.id,
                format!("entity {:?} has an empty label", e.id),
            );
        }
    }

    let mut seen_rel: HashSet<&str> = HashSet::new();
    for (i, r) in graph.relations.iter().enumerate() {
        if r.id.is_empty() {
            report.push(
                ViolationCode::MissingField,
                format!("relations[{i}]"),
                "relation id is empty".into(),
            );
        } else if !seen_rel.insert(&r.id) {
            report.push(
                ViolationCode::DuplicateId,
                &r.id,
                format!("relation id {:?} appears more than once", r.id),
            );
        }
        let subject = if r.id.is_empty() {
            format!("relations[{i}]")
        } else {
            r.id.clone()
        };
        if let Some(v) = check_endpoints(r.kind, &r.from, &r.to, &kinds) {
            report.push(v.0, subject, v.1);
        }
    }

    report.finish()
}

/// Endpoint resolution and endpoint-kind check shared by in-memory
/// validation and wire parsing.
pub(crate) fn check_endpoints(
    kind: super::RelationKind,
    from: &str,
    to: &str,
    kinds: &HashMap<&str, EntityKind>,
) -> Option<(ViolationCode, String)> {
    let missing: Vec<&str> = [from, to].into_iter().filter(|id| !kinds.contains_key(id)).collect();
    if !missing.is_empty() {
        return Some((
            ViolationCode::DanglingEndpoint,
            format!("{kind} endpoint(s) {missing:?} do not resolve"),
        ));
    }
    let (fk, tk) = (kinds[from], kinds[to]);
    if !kind.endpoint_rule().allows(fk, tk) {
        return Some((
            ViolationCode::EndpointKind,
            format!("{kind} may not connect {fk} -> {tk}"),
        ));
    }
    None
}
