//! Case-level train/validation split, JSONL files, and dataset statistics.

use std::collections::BTreeSet;
use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::pref::{DpoTrainingRecord, PrefRecord};
use crate::sft::{ChatTrainingRecord, SftRecord};

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("no records to split")]
    EmptyInput,
    #[error("invalid split {train}:{val}; both parts must be at least 1")]
    InvalidSpec { train: u32, val: u32 },
    #[error("line {line}: {source}")]
    LineParseError {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Anything that belongs to one case and, usually, one issue.
pub trait CaseRecord {
    fn case_id(&self) -> &str;
    fn issue_id(&self) -> Option<&str>;
}

impl CaseRecord for SftRecord {
    fn case_id(&self) -> &str {
        &self.case_id
    }
    fn issue_id(&self) -> Option<&str> {
        Some(&self.issue_id)
    }
}

impl CaseRecord for PrefRecord {
    fn case_id(&self) -> &str {
        &self.case_id
    }
    fn issue_id(&self) -> Option<&str> {
        Some(&self.issue_id)
    }
}

impl CaseRecord for ChatTrainingRecord {
    fn case_id(&self) -> &str {
        &self.meta.case_id
    }
    fn issue_id(&self) -> Option<&str> {
        Some(&self.meta.issue_id)
    }
}

impl CaseRecord for DpoTrainingRecord {
    fn case_id(&self) -> &str {
        &self.meta.record.case_id
    }
    fn issue_id(&self) -> Option<&str> {
        Some(&self.meta.record.issue_id)
    }
}

fn str_at<'a>(v: &'a Value, path: &[&str]) -> Option<&'a str> {
    path.iter().try_fold(v, |v, k| v.get(k))?.as_str()
}

/// Untyped records look for `meta.case_id`, then a top-level `case_id`.
impl CaseRecord for Value {
    fn case_id(&self) -> &str {
        str_at(self, &["meta", "case_id"])
            .or_else(|| str_at(self, &["case_id"]))
            .unwrap_or("")
    }
    fn issue_id(&self) -> Option<&str> {
        str_at(self, &["meta", "issue_id"]).or_else(|| str_at(self, &["issue_id"]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_parts: u32,
    pub val_parts: u32,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(train_parts: u32, val_parts: u32, seed: u64) -> Result<Self, DatasetError> {
        if train_parts == 0 || val_parts == 0 {
            return Err(DatasetError::InvalidSpec {
                train: train_parts,
                val: val_parts,
            });
        }
        Ok(Self {
            train_parts,
            val_parts,
            seed,
        })
    }

    /// Validation case count for `n` cases: `n * val / (train + val)`
    /// rounded half up, leaving at least one training case.
    pub fn val_cases(&self, n: usize) -> usize {
        let (n, t, v) = (n as u64, self.train_parts as u64, self.val_parts as u64);
        let k = (2 * n * v + (t + v)) / (2 * (t + v));
        k.min(n.saturating_sub(1)) as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split<R> {
    pub train: Vec<R>,
    pub val: Vec<R>,
    pub train_cases: Vec<String>,
    pub val_cases: Vec<String>,
}

/// Splits by case: the distinct case ids are shuffled with a seeded
/// generator and the first [`SplitSpec::val_cases`] go to validation.
/// Records keep their input order on each side.
pub fn split_train_val<R: CaseRecord + Clone>(records: &[R], spec: &SplitSpec) -> Result<Split<R>, DatasetError> {
    let spec = SplitSpec::new(spec.train_parts, spec.val_parts, spec.seed)?;
    if records.is_empty() {
        return Err(DatasetError::EmptyInput);
    }
    let mut cases: Vec<&str> = records
        .iter()
        .map(CaseRecord::case_id)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    cases.shuffle(&mut rng);
    let k = spec.val_cases(cases.len());
    if k == 0 {
        log::warn!(
            "{} case(s) at {}:{} leave the validation side empty",
            cases.len(),
            spec.train_parts,
            spec.val_parts
        );
    }
    let val_set: BTreeSet<&str> = cases[..k].iter().copied().collect();
    let (val, train): (Vec<R>, Vec<R>) = records.iter().cloned().partition(|r| val_set.contains(r.case_id()));
    let mut val_cases: Vec<String> = val_set.iter().map(|s| s.to_string()).collect();
    let mut train_cases: Vec<String> = cases[k..].iter().map(|s| s.to_string()).collect();
    val_cases.sort();
    train_cases.sort();
    Ok(Split {
        train,
        val,
        train_cases,
        val_cases,
    })
}

/// Writes one compact JSON object per line and returns the line count.
pub fn write_jsonl<R: Serialize>(records: &[R], path: &Path) -> Result<usize, DatasetError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut w = io::BufWriter::new(fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(records.len())
}

/// Reads a JSONL file. Blank lines are skipped; line numbers in errors are
/// 1-based.
pub fn read_jsonl<R: DeserializeOwned>(path: &Path) -> Result<Vec<R>, DatasetError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|source| DatasetError::LineParseError { line: i + 1, source })?;
        out.push(rec);
    }
    Ok(out)
}

/// Per-record sizes used by [`dataset_stats`].
pub trait RecordSizes {
    fn n_facts(&self) -> usize;
    fn n_chosen(&self) -> usize;
    /// `None` for records without a rejected side.
    fn n_rejected(&self) -> Option<usize>;
}

fn tag_count(text: &str, tag: &str) -> usize {
    text.matches(&format!("<{tag}>")).count()
}

impl RecordSizes for SftRecord {
    fn n_facts(&self) -> usize {
        self.facts.len()
    }
    fn n_chosen(&self) -> usize {
        self.rules.len()
    }
    fn n_rejected(&self) -> Option<usize> {
        None
    }
}

impl RecordSizes for PrefRecord {
    fn n_facts(&self) -> usize {
        self.facts.len()
    }
    fn n_chosen(&self) -> usize {
        self.chosen_rules.len()
    }
    fn n_rejected(&self) -> Option<usize> {
        Some(self.rejected_rules.len())
    }
}

/// Training records are counted by their `<fact>` and `<rule>` elements.
impl RecordSizes for Value {
    fn n_facts(&self) -> usize {
        str_at(self, &["user"]).map_or(0, |u| tag_count(u, "fact"))
    }
    fn n_chosen(&self) -> usize {
        str_at(self, &["chosen"])
            .or_else(|| str_at(self, &["assistant"]))
            .map_or(0, |t| tag_count(t, "rule"))
    }
    fn n_rejected(&self) -> Option<usize> {
        str_at(self, &["rejected"]).map(|t| tag_count(t, "rule"))
    }
}

impl RecordSizes for ChatTrainingRecord {
    fn n_facts(&self) -> usize {
        tag_count(&self.user, "fact")
    }
    fn n_chosen(&self) -> usize {
        tag_count(&self.assistant, "rule")
    }
    fn n_rejected(&self) -> Option<usize> {
        None
    }
}

impl RecordSizes for DpoTrainingRecord {
    fn n_facts(&self) -> usize {
        tag_count(&self.user, "fact")
    }
    fn n_chosen(&self) -> usize {
        tag_count(&self.chosen, "rule")
    }
    fn n_rejected(&self) -> Option<usize> {
        Some(tag_count(&self.rejected, "rule"))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub records: usize,
    pub distinct_cases: usize,
    pub distinct_issues: usize,
    pub mean_facts: f64,
    pub mean_chosen: f64,
    pub mean_rejected: Option<f64>,
}

fn mean3(total: usize, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    (total as f64 / n as f64 * 1000.0).round() / 1000.0
}

pub fn dataset_stats<R: CaseRecord + RecordSizes>(records: &[R]) -> DatasetStats {
    let cases: BTreeSet<&str> = records.iter().map(CaseRecord::case_id).collect();
    let issues: BTreeSet<(&str, &str)> = records
        .iter()
        .filter_map(|r| r.issue_id().map(|i| (r.case_id(), i)))
        .collect();
    let facts: usize = records.iter().map(RecordSizes::n_facts).sum();
    let chosen: usize = records.iter().map(RecordSizes::n_chosen).sum();
    let rejected: Vec<usize> = records.iter().filter_map(RecordSizes::n_rejected).collect();
    DatasetStats {
        records: records.len(),
        distinct_cases: cases.len(),
        distinct_issues: issues.len(),
        mean_facts: mean3(facts, records.len()),
        mean_chosen: mean3(chosen, records.len()),
        mean_rejected: (!rejected.is_empty()).then(|| mean3(rejected.iter().sum(), rejected.len())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn recs(cases: &[&str]) -> Vec<Value> {
        cases
            .iter()
            .enumerate()
            .map(|(i, c)| json!({"meta": {"case_id": c, "issue_id": format!("I{i}")}}))
            .collect()
    }

    #[test]
    fn val_case_counts() {
        let s = SplitSpec::new(10, 1, 0).unwrap();
        assert_eq!(s.val_cases(11), 1);
        assert_eq!(s.val_cases(110), 10);
        assert_eq!(s.val_cases(1), 0);
        // 16.5 / 11 = 1.5 rounds up
        assert_eq!(SplitSpec::new(10, 1, 0).unwrap().val_cases(16), 1);
        assert_eq!(SplitSpec::new(1, 1, 0).unwrap().val_cases(3), 2);
        assert_eq!(SplitSpec::new(1, 10, 0).unwrap().val_cases(2), 1);
    }

    #[test]
    fn zero_parts_rejected() {
        assert!(matches!(SplitSpec::new(0, 1, 0), Err(DatasetError::InvalidSpec { .. })));
    }

    #[test]
    fn eleven_cases_ten_to_one() {
        let ids: Vec<String> = (0..11).map(|i| format!("c{i:02}")).collect();
        let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
        let split = split_train_val(&recs(&refs), &SplitSpec::new(10, 1, 7).unwrap()).unwrap();
        assert_eq!((split.train_cases.len(), split.val_cases.len()), (10, 1));
        assert_eq!((split.train.len(), split.val.len()), (10, 1));
    }

    #[test]
    fn single_case_goes_to_train() {
        let split = split_train_val(&recs(&["only", "only"]), &SplitSpec::new(10, 1, 1).unwrap()).unwrap();
        assert_eq!(split.train.len(), 2);
        assert!(split.val.is_empty());
    }

    #[test]
    fn empty_input() {
        let r: Vec<Value> = Vec::new();
        assert!(matches!(
            split_train_val(&r, &SplitSpec::new(10, 1, 1).unwrap()),
            Err(DatasetError::EmptyInput)
        ));
    }

    #[test]
    fn jsonl_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.jsonl");
        let rows = vec![json!({"a": "x\ny"}), json!({"a": 2}), json!({"a": null})];
        assert_eq!(write_jsonl(&rows, &path).unwrap(), 3);
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.ends_with('\n'));
        assert_eq!(read_jsonl::<Value>(&path).unwrap(), rows);

        fs::write(&path, "{\"a\":1}\n\n{\"a\":2}\n\n").unwrap();
        assert_eq!(read_jsonl::<Value>(&path).unwrap().len(), 2);

        fs::write(&path, "{\"a\":1}\n{\"a\":\n{\"a\":3}\n").unwrap();
        match read_jsonl::<Value>(&path) {
            Err(DatasetError::LineParseError { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn stats_counts_and_means() {
        let empty: Vec<Value> = Vec::new();
        assert_eq!(dataset_stats(&empty), DatasetStats::default());

        let rows = vec![
            json!({"user": "<fact>a</fact><fact>b</fact>", "chosen": "<rule>r</rule>", "rejected": "<rule>x</rule><rule>y</rule>",
                   "meta": {"case_id": "c1", "issue_id": "I1"}}),
            json!({"user": "<fact>a</fact>", "chosen": "<rule>r</rule><rule>s</rule>", "rejected": "<rule>x</rule>",
                   "meta": {"case_id": "c1", "issue_id": "I2"}}),
            json!({"user": "<fact>a</fact>", "chosen": "<rule>r</rule>", "rejected": "<rule>x</rule>",
                   "meta": {"case_id": "c2", "issue_id": "I1"}}),
        ];
        let s = dataset_stats(&rows);
        assert_eq!((s.records, s.distinct_cases, s.distinct_issues), (3, 2, 3));
        assert_eq!(s.mean_facts, 1.333);
        assert_eq!(s.mean_chosen, 1.333);
        assert_eq!(s.mean_rejected, Some(1.333));
    }
}
