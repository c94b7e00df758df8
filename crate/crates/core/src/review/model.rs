use serde::{Deserialize, Serialize};

use crate::kg::{EntityKind, RelationKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EntityGrade {
    Good,
    Acceptable,
    Poor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Verdict {
    Pass,
    Fail,
}

/// `derived` is set only by [`derive_relation_verdicts`](super::derive_relation_verdicts)
/// and always comes with `Fail`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RelationVerdict {
    pub verdict: Verdict,
    #[serde(default)]
    pub derived: bool,
}

impl RelationVerdict {
    pub fn manual(verdict: Verdict) -> Self {
        Self {
            verdict,
            derived: false,
        }
    }

    pub fn derived_fail() -> Self {
        Self {
            verdict: Verdict::Fail,
            derived: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RecordGrade {
    Correct,
    CorrectMinor,
    Wrong,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemKind {
    Entity,
    Relation,
    MissingFlag,
    SftRecord,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ItemRef {
    pub case_id: String,
    pub kind: ItemKind,
    /// Entity or relation id, SFT record id, or a reviewer-chosen id for a
    /// missing-entity flag.
    pub target_id: String,
}

impl ItemRef {
    pub fn new(case_id: impl Into<String>, kind: ItemKind, target_id: impl Into<String>) -> Self {
        Self {
            case_id: case_id.into(),
            kind,
            target_id: target_id.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MissingNote {
    pub entity_kind: EntityKind,
    /// Opinion text the reviewer believes should have been extracted.
    pub span: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelValue {
    Entity(EntityGrade),
    Relation(RelationVerdict),
    Missing(MissingNote),
    Record(RecordGrade),
}

impl LabelValue {
    pub fn fits(&self, kind: ItemKind) -> bool {
        matches!(
            (self, kind),
            (LabelValue::Entity(_), ItemKind::Entity)
                | (LabelValue::Relation(_), ItemKind::Relation)
                | (LabelValue::Missing(_), ItemKind::MissingFlag)
                | (LabelValue::Record(_), ItemKind::SftRecord)
        )
    }

    /// Higher is worse; used to break majority ties toward the harsher
    /// grade.
    pub(crate) fn severity(&self) -> u8 {
        match self {
            LabelValue::Entity(g) => *g as u8,
            LabelValue::Relation(v) => v.verdict as u8,
            LabelValue::Record(g) => *g as u8,
            LabelValue::Missing(_) => 0,
        }
    }
}

/// A label as submitted by a client.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSubmission {
    pub item: ItemRef,
    pub value: LabelValue,
    pub reviewer: String,
}

/// A stored label. `seq` orders submissions within a batch; `timestamp` is
/// milliseconds since the Unix epoch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewLabel {
    pub item: ItemRef,
    pub value: LabelValue,
    pub reviewer: String,
    pub seq: u64,
    pub timestamp: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewItem {
    pub item: ItemRef,
    /// Entity label, or the relation rendered as `from -KIND-> to`, or the
    /// record's assistant text.
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entity_kind: Option<EntityKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relation: Option<RelationEnds>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationEnds {
    pub kind: RelationKind,
    pub from: String,
    pub to: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelPolicy {
    /// The most recent label for an item wins, whoever submitted it.
    #[default]
    Single,
    /// Each reviewer's latest label votes; ties go to the harsher value.
    Majority,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchSpec {
    pub n_cases: usize,
    /// Entity kinds to review; all kinds when absent. Relations are kept
    /// when both endpoints are kept.
    #[serde(default)]
    pub kinds: Option<Vec<EntityKind>>,
    pub seed: u64,
    /// SFT records of the sampled cases to include, at most.
    #[serde(default)]
    pub n_records: usize,
    #[serde(default)]
    pub policy: LabelPolicy,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewBatch {
    pub id: String,
    pub spec: BatchSpec,
    pub cases: Vec<String>,
    pub items: Vec<ReviewItem>,
    #[serde(default)]
    pub closed: bool,
    /// Every submission in order, including overwritten ones.
    #[serde(default)]
    pub audit: Vec<ReviewLabel>,
}
