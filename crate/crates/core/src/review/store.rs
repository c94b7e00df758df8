use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::quality::{
    aggregate_quality, aggregate_record_quality, derive_relation_verdicts, DerivedRelation, QualityTable,
    RecordQuality, RelationStatus,
};
use super::{LabelSubmission, ReviewBatch, ReviewError, ReviewItem, ReviewLabel};
use crate::shards::write_atomic;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub id: String,
    pub cases: Vec<String>,
    pub items: usize,
    pub labels: usize,
    pub closed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Page {
    pub items: Vec<ReviewItem>,
    /// Pass back as `cursor` to get the next page; absent on the last page.
    pub next_cursor: Option<usize>,
}

type Shared = Arc<RwLock<ReviewBatch>>;

/// Batches and their labels, optionally persisted as one JSON file per
/// batch. Writes to a batch are serialized by its lock; reads clone a
/// snapshot.
#[derive(Debug, Default)]
pub struct ReviewStore {
    dir: Option<PathBuf>,
    batches: RwLock<BTreeMap<String, Shared>>,
    last_derived: Mutex<BTreeMap<String, Vec<DerivedRelation>>>,
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

impl ReviewStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (creating if needed) a store directory and loads its batches.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, ReviewError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let mut batches = BTreeMap::new();
        for entry in fs::read_dir(&dir)? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "json") {
                let batch: ReviewBatch = serde_json::from_slice(&fs::read(&path)?).map_err(|e| {
                    std::io::Error::new(std::io::ErrorKind::InvalidData, format!("{}: {e}", path.display()))
                })?;
                batches.insert(batch.id.clone(), Arc::new(RwLock::new(batch)));
            }
        }
        Ok(Self {
            dir: Some(dir),
            batches: RwLock::new(batches),
            last_derived: Mutex::default(),
        })
    }

    fn persist(&self, batch: &ReviewBatch) -> Result<(), ReviewError> {
        if let Some(dir) = &self.dir {
            let body = serde_json::to_vec_pretty(batch).map_err(std::io::Error::from)?;
            write_atomic(&dir.join(format!("{}.json", batch.id)), &body)?;
        }
        Ok(())
    }

    fn shared(&self, id: &str) -> Result<Shared, ReviewError> {
        self.batches
            .read()
            .expect("store lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ReviewError::UnknownBatch(id.to_string()))
    }

    pub fn get(&self, id: &str) -> Result<ReviewBatch, ReviewError> {
        Ok(self.shared(id)?.read().expect("batch lock").clone())
    }

    pub fn list(&self) -> Vec<BatchSummary> {
        let all: Vec<Shared> = self.batches.read().expect("store lock").values().cloned().collect();
        all.iter()
            .map(|b| {
                let b = b.read().expect("batch lock");
                BatchSummary {
                    id: b.id.clone(),
                    cases: b.cases.clone(),
                    items: b.items.len(),
                    labels: b.audit.len(),
                    closed: b.closed,
                }
            })
            .collect()
    }

    /// Adds a batch. A batch with the same id already present is returned
    /// unchanged, with `false`.
    pub fn insert(&self, batch: ReviewBatch) -> Result<(ReviewBatch, bool), ReviewError> {
        let mut map = self.batches.write().expect("store lock");
        if let Some(existing) = map.get(&batch.id) {
            return Ok((existing.read().expect("batch lock").clone(), false));
        }
        self.persist(&batch)?;
        map.insert(batch.id.clone(), Arc::new(RwLock::new(batch.clone())));
        Ok((batch, true))
    }

    pub fn items(&self, id: &str, cursor: usize, limit: usize) -> Result<Page, ReviewError> {
        let shared = self.shared(id)?;
        let b = shared.read().expect("batch lock");
        let end = cursor.saturating_add(limit.max(1)).min(b.items.len());
        let start = cursor.min(end);
        Ok(Page {
            items: b.items[start..end].to_vec(),
            next_cursor: (end < b.items.len()).then_some(end),
        })
    }

    pub fn submit(&self, id: &str, sub: LabelSubmission) -> Result<ReviewLabel, ReviewError> {
        let shared = self.shared(id)?;
        let mut b = shared.write().expect("batch lock");
        b.check_submission(&sub)?;
        let label = b.record(sub, now_ms()).clone();
        if let Err(e) = self.persist(&b) {
            b.audit.pop();
            return Err(e);
        }
        Ok(label)
    }

    pub fn close(&self, id: &str) -> Result<ReviewBatch, ReviewError> {
        let shared = self.shared(id)?;
        let mut b = shared.write().expect("batch lock");
        if !b.closed {
            b.closed = true;
            self.persist(&b)?;
        }
        Ok(b.clone())
    }

    /// Recomputes relation verdicts, logging derived failures that no longer
    /// hold since the previous derivation.
    pub fn derive(&self, id: &str) -> Result<Vec<DerivedRelation>, ReviewError> {
        let batch = self.get(id)?;
        let now = derive_relation_verdicts(&batch);
        let mut last = self.last_derived.lock().expect("derive lock");
        if let Some(prev) = last.get(id) {
            for (p, n) in prev.iter().zip(&now) {
                if p.status == RelationStatus::DerivedFail && n.status != RelationStatus::DerivedFail {
                    log::info!(
                        "batch {id}: relation {}/{} re-opened, now {:?}",
                        n.item.case_id,
                        n.item.target_id,
                        n.status
                    );
                }
            }
        }
        last.insert(id.to_string(), now.clone());
        Ok(now)
    }

    pub fn quality(&self, id: &str) -> Result<QualityTable, ReviewError> {
        Ok(aggregate_quality(&self.get(id)?))
    }

    pub fn record_quality(&self, id: &str) -> Result<RecordQuality, ReviewError> {
        Ok(aggregate_record_quality(&self.get(id)?))
    }
}
