use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::model::*;
use crate::kg::EntityKind;

/// The label that counts for each item under the batch's policy.
pub fn effective_labels(batch: &ReviewBatch) -> BTreeMap<&ItemRef, &ReviewLabel> {
    let latest = batch.labels_by_reviewer();
    let mut by_item: BTreeMap<&ItemRef, Vec<&ReviewLabel>> = BTreeMap::new();
    for ((item, _), label) in latest {
        by_item.entry(item).or_default().push(label);
    }
    by_item
        .into_iter()
        .map(|(item, labels)| {
            let pick = match batch.spec.policy {
                LabelPolicy::Single => labels.iter().max_by_key(|l| l.seq),
                LabelPolicy::Majority => labels.iter().max_by_key(|l| {
                    let votes = labels.iter().filter(|o| o.value == l.value).count();
                    (votes, l.value.severity(), l.seq)
                }),
            };
            (item, *pick.expect("at least one label per item"))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationStatus {
    Pass,
    Fail,
    /// Forced by a Poor endpoint, whatever the manual verdict was.
    DerivedFail,
    /// An endpoint or the relation itself is not graded yet.
    Pending,
}

impl RelationStatus {
    pub fn verdict(self) -> Option<RelationVerdict> {
        match self {
            RelationStatus::Pass => Some(RelationVerdict::manual(Verdict::Pass)),
            RelationStatus::Fail => Some(RelationVerdict::manual(Verdict::Fail)),
            RelationStatus::DerivedFail => Some(RelationVerdict::derived_fail()),
            RelationStatus::Pending => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DerivedRelation {
    pub item: ItemRef,
    pub status: RelationStatus,
}

/// Applies the endpoint rule to every relation item: a Poor endpoint fails
/// the relation; otherwise an ungraded endpoint leaves it pending; otherwise
/// the manual verdict stands.
pub fn derive_relation_verdicts(batch: &ReviewBatch) -> Vec<DerivedRelation> {
    let labels = effective_labels(batch);
    let grade = |case_id: &str, id: &str| {
        let key = ItemRef::new(case_id, ItemKind::Entity, id);
        match labels.get(&key).map(|l| &l.value) {
            Some(LabelValue::Entity(g)) => Some(*g),
            _ => None,
        }
    };
    batch
        .items
        .iter()
        .filter_map(|it| Some((it, it.relation.as_ref()?)))
        .map(|(it, ends)| {
            let case = it.item.case_id.as_str();
            let grades = [grade(case, &ends.from), grade(case, &ends.to)];
            let status = if grades.contains(&Some(EntityGrade::Poor)) {
                RelationStatus::DerivedFail
            } else if grades.contains(&None) {
                RelationStatus::Pending
            } else {
                match labels.get(&it.item).map(|l| &l.value) {
                    Some(LabelValue::Relation(v)) if v.verdict == Verdict::Pass => RelationStatus::Pass,
                    Some(LabelValue::Relation(_)) => RelationStatus::Fail,
                    _ => RelationStatus::Pending,
                }
            };
            DerivedRelation {
                item: it.item.clone(),
                status,
            }
        })
        .collect()
}

/// `num / den` as a whole percent, rounded half up, or `"n/a"`.
pub fn percent(num: usize, den: usize) -> String {
    if den == 0 {
        return "n/a".into();
    }
    format!("{}%", (200 * num + den) / (2 * den))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityRow {
    pub kind: EntityKind,
    pub good: usize,
    pub acceptable: usize,
    pub poor: usize,
    pub missing: usize,
    /// Denominator of the Good, Acceptable and Poor shares.
    pub graded: usize,
    /// Denominator of the Missing share: graded plus flagged missing.
    pub missing_denominator: usize,
    pub good_pct: String,
    pub acceptable_pct: String,
    pub poor_pct: String,
    pub missing_pct: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationRow {
    pub pass: usize,
    /// Manual and derived failures.
    pub fail: usize,
    pub derived_fail: usize,
    pub pending: usize,
    /// `pass + fail`.
    pub judged: usize,
    pub pass_pct: String,
    pub fail_pct: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QualityTable {
    pub batch_id: String,
    pub entities: Vec<EntityRow>,
    pub relations: RelationRow,
}

const CORE_KINDS: [EntityKind; 4] = [
    EntityKind::MaterialFact,
    EntityKind::LegalIssue,
    EntityKind::Rule,
    EntityKind::Conclusion,
];

fn entity_row(kind: EntityKind, counts: [usize; 4]) -> EntityRow {
    let [good, acceptable, poor, missing] = counts;
    let graded = good + acceptable + poor;
    EntityRow {
        kind,
        good,
        acceptable,
        poor,
        missing,
        graded,
        missing_denominator: graded + missing,
        good_pct: percent(good, graded),
        acceptable_pct: percent(acceptable, graded),
        poor_pct: percent(poor, graded),
        missing_pct: percent(missing, graded + missing),
    }
}

/// Rows for facts, issues, rules and conclusions always, then any other
/// kind that has labels.
pub fn aggregate_quality(batch: &ReviewBatch) -> QualityTable {
    let labels = effective_labels(batch);
    let kind_of: BTreeMap<&ItemRef, EntityKind> = batch
        .items
        .iter()
        .filter_map(|it| Some((&it.item, it.entity_kind?)))
        .collect();

    let mut counts: BTreeMap<EntityKind, [usize; 4]> = BTreeMap::new();
    for (item, label) in &labels {
        let (kind, col) = match &label.value {
            LabelValue::Entity(g) => match kind_of.get(item) {
                Some(k) => (*k, *g as usize),
                None => continue,
            },
            LabelValue::Missing(note) => (note.entity_kind, 3),
            _ => continue,
        };
        counts.entry(kind).or_default()[col] += 1;
    }

    let mut entities: Vec<EntityRow> = CORE_KINDS
        .iter()
        .map(|k| entity_row(*k, counts.get(k).copied().unwrap_or_default()))
        .collect();
    for k in EntityKind::ALL.iter().filter(|k| !CORE_KINDS.contains(k)) {
        if let Some(c) = counts.get(k) {
            entities.push(entity_row(*k, *c));
        }
    }

    let derived = derive_relation_verdicts(batch);
    let count = |s: RelationStatus| derived.iter().filter(|d| d.status == s).count();
    let pass = count(RelationStatus::Pass);
    let derived_fail = count(RelationStatus::DerivedFail);
    let fail = count(RelationStatus::Fail) + derived_fail;
    let judged = pass + fail;
    QualityTable {
        batch_id: batch.id.clone(),
        entities,
        relations: RelationRow {
            pass,
            fail,
            derived_fail,
            pending: count(RelationStatus::Pending),
            judged,
            pass_pct: percent(pass, judged),
            fail_pct: percent(fail, judged),
        },
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordQuality {
    pub correct: usize,
    pub correct_minor: usize,
    pub wrong: usize,
}

pub fn aggregate_record_quality(batch: &ReviewBatch) -> RecordQuality {
    let mut q = RecordQuality::default();
    for label in effective_labels(batch).values() {
        match label.value {
            LabelValue::Record(RecordGrade::Correct) => q.correct += 1,
            LabelValue::Record(RecordGrade::CorrectMinor) => q.correct_minor += 1,
            LabelValue::Record(RecordGrade::Wrong) => q.wrong += 1,
            _ => {}
        }
    }
    q
}
