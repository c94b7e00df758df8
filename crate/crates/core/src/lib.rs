//! IRAC legal knowledge graphs and the training data built from them.
//!
//! The pipeline runs in stages that communicate through files:
//!
//! 1. [`corpus`] ingests case opinions and draws a stratified sample.
//! 2. [`extraction`] prompts a model for each case's IRAC graph and
//!    validates it against the [`kg`] schema.
//! 3. [`sft`] and [`pref`] walk each graph with the [`query`] primitives and
//!    produce instruction-tuning and preference records.
//! 4. [`dataset`] splits, reads, writes and summarises the records.
//! 5. [`review`] collects expert grades and aggregates quality tables.
//!
//! All model calls go through [`gateway`], which supports record/replay so
//! every stage is reproducible offline.

pub mod corpus;
pub mod dataset;
pub mod extraction;
pub mod fixtures;
pub mod gateway;
pub mod kg;
pub mod pref;
pub mod prompts;
pub mod query;
pub mod repair;
pub mod review;
pub mod sft;
mod shards;
pub mod synth;
pub mod text;
mod xml;

pub use corpus::{CaseCorpus, CaseDocument};
pub use gateway::{Gateway, LlmBackend, LlmRequest, LlmResponse};
pub use kg::{Entity, EntityKind, IracGraph, Relation, RelationKind, ValidationReport};
pub use query::{FactSet, RuleSet};
