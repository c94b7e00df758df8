//! Expert review of extracted graphs and generated records: batch sampling,
//! label storage with an audit trail, the Poor-endpoint rule for relations,
//! and quality tables.

mod model;
mod quality;
mod store;

use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::kg::IracGraph;
use crate::sft::ChatTrainingRecord;

pub use model::*;
pub use quality::{
    aggregate_quality, aggregate_record_quality, derive_relation_verdicts, effective_labels, percent, DerivedRelation,
    EntityRow, QualityTable, RecordQuality, RelationRow, RelationStatus,
};
pub use store::{BatchSummary, Page, ReviewStore};

#[derive(Debug, thiserror::Error)]
pub enum ReviewError {
    #[error("asked for {wanted} cases but only {have} graphs are available")]
    InsufficientCases { wanted: usize, have: usize },
    #[error("no batch {0:?}")]
    UnknownBatch(String),
    #[error("no item {0:?} in this batch")]
    UnknownItem(String),
    #[error("batch {0:?} is closed")]
    ClosedBatch(String),
    #[error("invalid label: {0}")]
    InvalidLabel(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn sample_indices(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, n, k).into_vec();
    idx.sort_unstable();
    idx
}

/// Draws `spec.n_cases` graphs (by sorted case id, seeded) and turns every
/// entity and relation of each into an item, followed by up to
/// `spec.n_records` SFT records of those cases. The batch id is a digest of
/// the contents, so the same inputs give the same batch.
pub fn create_review_batch(
    graphs: &[IracGraph],
    records: &[ChatTrainingRecord],
    spec: &BatchSpec,
) -> Result<ReviewBatch, ReviewError> {
    let mut sorted: Vec<&IracGraph> = graphs.iter().collect();
    sorted.sort_by(|a, b| a.case_id.cmp(&b.case_id));
    sorted.dedup_by(|a, b| a.case_id == b.case_id);
    if spec.n_cases > sorted.len() {
        return Err(ReviewError::InsufficientCases {
            wanted: spec.n_cases,
            have: sorted.len(),
        });
    }
    let picked: Vec<&IracGraph> = sample_indices(sorted.len(), spec.n_cases, spec.seed)
        .into_iter()
        .map(|i| sorted[i])
        .collect();

    let keep = |k| spec.kinds.as_ref().is_none_or(|ks| ks.contains(&k));
    let mut items = Vec::new();
    for g in &picked {
        let mut kept = BTreeSet::new();
        for e in g.entities.iter().filter(|e| keep(e.kind)) {
            kept.insert(e.id.as_str());
            items.push(ReviewItem {
                item: ItemRef::new(&g.case_id, ItemKind::Entity, &e.id),
                text: e.label.clone(),
                entity_kind: Some(e.kind),
                relation: None,
            });
        }
        for r in &g.relations {
            if !(kept.contains(r.from.as_str()) && kept.contains(r.to.as_str())) {
                continue;
            }
            items.push(ReviewItem {
                item: ItemRef::new(&g.case_id, ItemKind::Relation, &r.id),
                text: format!("{} -{}-> {}", r.from, r.kind, r.to),
                entity_kind: None,
                relation: Some(RelationEnds {
                    kind: r.kind,
                    from: r.from.clone(),
                    to: r.to.clone(),
                }),
            });
        }
    }

    let cases: Vec<String> = picked.iter().map(|g| g.case_id.clone()).collect();
    let case_set: BTreeSet<&str> = cases.iter().map(String::as_str).collect();
    let mut pool: Vec<&ChatTrainingRecord> = records
        .iter()
        .filter(|r| case_set.contains(r.meta.case_id.as_str()))
        .collect();
    pool.sort_by(|a, b| a.meta.record_id.cmp(&b.meta.record_id));
    pool.dedup_by(|a, b| a.meta.record_id == b.meta.record_id);
    let n_records = spec.n_records.min(pool.len());
    for i in sample_indices(pool.len(), n_records, spec.seed) {
        let r = pool[i];
        items.push(ReviewItem {
            item: ItemRef::new(&r.meta.case_id, ItemKind::SftRecord, &r.meta.record_id),
            text: r.assistant.clone(),
            entity_kind: None,
            relation: None,
        });
    }

    let digest_input = serde_json::to_string(&(&spec, &items)).unwrap_or_default();
    Ok(ReviewBatch {
        id: format!("b-{}", crate::text::record_id(&[&digest_input])),
        spec: spec.clone(),
        cases,
        items,
        closed: false,
        audit: Vec::new(),
    })
}

impl ReviewBatch {
    pub fn find_item(&self, item: &ItemRef) -> Option<&ReviewItem> {
        self.items.iter().find(|i| &i.item == item)
    }

    /// Checks that `sub` may be stored in this batch.
    pub fn check_submission(&self, sub: &LabelSubmission) -> Result<(), ReviewError> {
        if self.closed {
            return Err(ReviewError::ClosedBatch(self.id.clone()));
        }
        if sub.reviewer.trim().is_empty() {
            return Err(ReviewError::InvalidLabel("empty reviewer".into()));
        }
        if !sub.value.fits(sub.item.kind) {
            return Err(ReviewError::InvalidLabel(format!(
                "value does not apply to a {:?} item",
                sub.item.kind
            )));
        }
        match (&sub.item.kind, &sub.value) {
            (ItemKind::MissingFlag, LabelValue::Missing(note)) => {
                if !self.cases.contains(&sub.item.case_id) {
                    return Err(ReviewError::UnknownItem(format!("case {}", sub.item.case_id)));
                }
                if sub.item.target_id.trim().is_empty() || note.span.trim().is_empty() {
                    return Err(ReviewError::InvalidLabel(
                        "missing-entity flag needs an id and a span".into(),
                    ));
                }
            }
            (_, value) => {
                if self.find_item(&sub.item).is_none() {
                    return Err(ReviewError::UnknownItem(sub.item.target_id.clone()));
                }
                if let LabelValue::Relation(v) = value {
                    if v.derived {
                        return Err(ReviewError::InvalidLabel("derived verdicts cannot be submitted".into()));
                    }
                }
            }
        }
        Ok(())
    }

    /// Appends a label to the audit trail. The caller has checked it.
    pub fn record(&mut self, sub: LabelSubmission, timestamp: u64) -> &ReviewLabel {
        let seq = self.audit.last().map_or(0, |l| l.seq + 1);
        self.audit.push(ReviewLabel {
            item: sub.item,
            value: sub.value,
            reviewer: sub.reviewer,
            seq,
            timestamp,
        });
        self.audit.last().expect("just pushed")
    }

    /// Latest label per (item, reviewer).
    pub fn labels_by_reviewer(&self) -> BTreeMap<(&ItemRef, &str), &ReviewLabel> {
        let mut out = BTreeMap::new();
        for l in &self.audit {
            out.insert((&l.item, l.reviewer.as_str()), l);
        }
        out
    }
}
