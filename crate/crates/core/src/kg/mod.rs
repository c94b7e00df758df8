//! IRAC graph domain model, endpoint table, wire format and validation.

mod model;
mod validate;
mod wire;

pub use model::{
    relation_endpoint_rule, EndpointRule, Entity, EntityKind, IracGraph, Relation, RelationKind, UnknownKind,
};
pub use validate::{validate_graph, ValidationReport, Violation, ViolationCode};
pub use wire::{parse_graph_json, serialize_graph, ParseMode};

pub(crate) use wire::{graph_from_object, load_object};

#[derive(Debug, thiserror::Error)]
pub enum KgError {
    #[error("unparseable document: {0}")]
    UnparseableDocument(String),
    #[error("graph violates the schema ({} violation(s))", .0.violations.len())]
    InvalidGraph(ValidationReport),
}
