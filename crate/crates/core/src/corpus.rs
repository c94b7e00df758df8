//! Loading, indexing and stratified sampling of case opinions.
//!
//! A corpus is every `*.txt` file below a root directory. An optional JSON
//! manifest assigns case ids and jurisdictions:
//!
//! ```json
//! [{"file": "ny/0001.txt", "case_id": "ny-0001", "jurisdiction": "NY"}]
//! ```
//!
//! `file` is matched against the path relative to the root (with `/`
//! separators) and then against the bare file name. Files without an entry
//! get the file stem as id and the jurisdiction `unknown`.
//!
//! Sampling draws each jurisdiction independently with a ChaCha8 generator
//! seeded from SHA-256 of `(seed, jurisdiction)`, over cases sorted by id,
//! so a draw depends only on the corpus contents and the seed.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub const UNKNOWN_JURISDICTION: &str = "unknown";

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("corpus root {0} does not exist")]
    MissingRoot(PathBuf),
    #[error("no readable cases under {0}")]
    EmptyCorpus(PathBuf),
    #[error("case id {case_id:?} used by both {first} and {second}")]
    DuplicateCaseId {
        case_id: String,
        first: PathBuf,
        second: PathBuf,
    },
    #[error("case {0:?} not found")]
    CaseNotFound(String),
    #[error("manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseDocument {
    pub case_id: String,
    pub jurisdiction: String,
    pub opinion_text: String,
    pub source_path: PathBuf,
}

/// Ordered, id-indexed collection of cases. Immutable once built.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CaseCorpus {
    cases: Vec<CaseDocument>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl CaseCorpus {
    pub fn from_cases(cases: Vec<CaseDocument>) -> Result<Self, CorpusError> {
        let mut index = HashMap::with_capacity(cases.len());
        for (i, c) in cases.iter().enumerate() {
            if let Some(prev) = index.insert(c.case_id.clone(), i) {
                return Err(CorpusError::DuplicateCaseId {
                    case_id: c.case_id.clone(),
                    first: cases[prev].source_path.clone(),
                    second: c.source_path.clone(),
                });
            }
        }
        Ok(Self { cases, index })
    }

    pub fn cases(&self) -> &[CaseDocument] {
        &self.cases
    }

    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &CaseDocument> {
        self.cases.iter()
    }

    /// Ids are case-sensitive.
    pub fn get_case(&self, case_id: &str) -> Result<&CaseDocument, CorpusError> {
        self.index
            .get(case_id)
            .map(|&i| &self.cases[i])
            .ok_or_else(|| CorpusError::CaseNotFound(case_id.to_string()))
    }

    /// Number of cases per jurisdiction.
    pub fn strata(&self) -> BTreeMap<&str, usize> {
        let mut out = BTreeMap::new();
        for c in &self.cases {
            *out.entry(c.jurisdiction.as_str()).or_default() += 1;
        }
        out
    }
}

impl<'de> Deserialize<'de> for CaseCorpus {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            cases: Vec<CaseDocument>,
        }
        let raw = Raw::deserialize(d)?;
        CaseCorpus::from_cases(raw.cases).map_err(serde::de::Error::custom)
    }
}

pub fn get_case<'a>(corpus: &'a CaseCorpus, case_id: &str) -> Result<&'a CaseDocument, CorpusError> {
    corpus.get_case(case_id)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    #[serde(default)]
    pub case_id: Option<String>,
    #[serde(default)]
    pub jurisdiction: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedFile {
    pub path: PathBuf,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub corpus: CaseCorpus,
    pub skipped: Vec<SkippedFile>,
}

fn load_manifest(path: &Path) -> Result<Vec<ManifestEntry>, CorpusError> {
    let err = |message: String| CorpusError::Manifest {
        path: path.to_path_buf(),
        message,
    };
    let text = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
    serde_json::from_str(&text).map_err(|e| err(e.to_string()))
}

fn relative_key(root: &Path, path: &Path) -> String {
    path.strip_prefix(root)
        .unwrap_or(path)
        .components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}

/// Reads every `*.txt` under `root`. Files that are not UTF-8 or are blank
/// are skipped and reported rather than failing the run.
pub fn ingest_cases(root: &Path, manifest: Option<&Path>) -> Result<Ingested, CorpusError> {
    if !root.is_dir() {
        return Err(CorpusError::MissingRoot(root.to_path_buf()));
    }
    let entries = manifest.map(load_manifest).transpose()?.unwrap_or_default();
    let by_rel: HashMap<&str, &ManifestEntry> = entries.iter().map(|e| (e.file.as_str(), e)).collect();

    let mut files: Vec<PathBuf> = walkdir::WalkDir::new(root)
        .into_iter()
        .filter_map(Result::ok)
        .filter(|e| e.file_type().is_file() && e.path().extension().is_some_and(|x| x == "txt"))
        .map(|e| e.into_path())
        .collect();
    files.sort();

    let read: Vec<Result<(PathBuf, String), SkippedFile>> = files
        .into_par_iter()
        .map(|path| {
            let skip = |reason: String| SkippedFile {
                path: path.clone(),
                reason,
            };
            let bytes = fs::read(&path).map_err(|e| skip(e.to_string()))?;
            let text = String::from_utf8(bytes).map_err(|e| skip(format!("not UTF-8: {e}")))?;
            if text.trim().is_empty() {
                return Err(skip("empty opinion text".into()));
            }
            Ok((path, text))
        })
        .collect();

    let mut cases = Vec::new();
    let mut skipped = Vec::new();
    for r in read {
        match r {
            Ok((path, opinion_text)) => {
                let rel = relative_key(root, &path);
                let name = path.file_name().map(|n| n.to_string_lossy().into_owned());
                let entry = by_rel
                    .get(rel.as_str())
                    .or_else(|| name.as_deref().and_then(|n| by_rel.get(n)));
                let stem = path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default();
                cases.push(CaseDocument {
                    case_id: entry.and_then(|e| e.case_id.clone()).unwrap_or(stem),
                    jurisdiction: entry
                        .and_then(|e| e.jurisdiction.clone())
                        .unwrap_or_else(|| UNKNOWN_JURISDICTION.to_string()),
                    opinion_text,
                    source_path: path,
                });
            }
            Err(s) => {
                log::warn!("skipping {}: {}", s.path.display(), s.reason);
                skipped.push(s);
            }
        }
    }
    if cases.is_empty() {
        return Err(CorpusError::EmptyCorpus(root.to_path_buf()));
    }
    Ok(Ingested {
        corpus: CaseCorpus::from_cases(cases)?,
        skipped,
    })
}

fn stratum_rng(seed: u64, jurisdiction: &str) -> ChaCha8Rng {
    let digest = crate::text::sha256_hex(&[&seed.to_string(), jurisdiction]);
    let mut bytes = [0u8; 32];
    hex::decode_to_slice(digest, &mut bytes).expect("sha256 hex is 32 bytes");
    ChaCha8Rng::from_seed(bytes)
}

/// Draws `min(per_jurisdiction, |stratum|)` cases uniformly without
/// replacement from every jurisdiction. Output is ordered by jurisdiction,
/// then case id.
pub fn sample_by_jurisdiction(corpus: &CaseCorpus, per_jurisdiction: usize, seed: u64) -> CaseCorpus {
    let mut strata: BTreeMap<&str, Vec<&CaseDocument>> = BTreeMap::new();
    for c in corpus.iter() {
        strata.entry(c.jurisdiction.as_str()).or_default().push(c);
    }
    let mut picked = Vec::new();
    for (jurisdiction, mut members) in strata {
        members.sort_by(|a, b| a.case_id.cmp(&b.case_id));
        let take = per_jurisdiction.min(members.len());
        let mut rng = stratum_rng(seed, jurisdiction);
        let mut idx = rand::seq::index::sample(&mut rng, members.len(), take).into_vec();
        idx.sort_unstable();
        picked.extend(idx.into_iter().map(|i| members[i].clone()));
    }
    CaseCorpus::from_cases(picked).expect("sample of a valid corpus has unique ids")
}
