//! Per-case graph extraction: render the extraction prompt, call the model,
//! recover and validate the JSON, and persist the graph or quarantine the
//! raw output.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::corpus::{CaseCorpus, CaseDocument};
use crate::gateway::{FinishState, Gateway};
use crate::kg::{
    graph_from_object, load_object, parse_graph_json, serialize_graph, IracGraph, ParseMode, ValidationReport,
};
use crate::prompts;

pub use crate::repair::{repair_json, RepairError};

pub const DEFAULT_TRUNCATION_BUDGET: usize = 300_000;
pub const SYNTHETIC_CASE_ID: &str = "CASE";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionConfig {
    /// Maximum opinion length in characters placed into the prompt.
    pub truncation_budget: usize,
    /// One temperature per attempt. The first entry is the initial call; the
    /// rest are re-prompts after an unparseable answer.
    pub attempt_temperatures: Vec<f64>,
    /// Worker threads for [`run_extraction`].
    pub jobs: usize,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        Self {
            truncation_budget: DEFAULT_TRUNCATION_BUDGET,
            attempt_temperatures: vec![0.0, 0.0, 0.2],
            jobs: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KgPrompt {
    pub text: String,
    pub truncated: bool,
}

/// Keeps the head of `text` within `budget` characters, cutting at the last
/// paragraph break (or line break) inside the budget when there is one.
pub fn truncate_opinion(text: &str, budget: usize) -> (&str, bool) {
    let Some((cut, _)) = text.char_indices().nth(budget) else {
        return (text, false);
    };
    let head = &text[..cut];
    let end = head
        .rfind("\n\n")
        .or_else(|| head.rfind('\n'))
        .filter(|&i| i > 0)
        .unwrap_or(cut);
    (head[..end].trim_end(), true)
}

/// The extraction prompt for one case, with the opinion substituted.
pub fn render_kg_prompt(case: &CaseDocument, budget: usize) -> KgPrompt {
    let (opinion, truncated) = truncate_opinion(&case.opinion_text, budget);
    KgPrompt {
        text: prompts::fill(prompts::KG_EXTRACTION, &[("case_opinion", opinion.trim_end())]),
        truncated,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractionStatus {
    Ok,
    OkWithDrops,
    Quarantined,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExtractionOutcome {
    pub case_id: String,
    pub status: ExtractionStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub graph: Option<IracGraph>,
    pub report: ValidationReport,
    /// SHA-256 of the last raw model answer.
    pub raw_digest: String,
    #[serde(skip)]
    pub raw_text: String,
    pub errors: Vec<String>,
    pub attempts: usize,
    pub truncated: bool,
    pub synthesized_case: bool,
}

/// Adds the case's own entity when the answer omits it but has CITES or
/// REFERENCES edges that need a source. Dangling sources of those edges are
/// pointed at the new entity. Returns whether anything was added.
fn synthesize_case_entity(doc: &mut Map<String, Value>, case_id: &str) -> bool {
    let Some(Value::Array(vertices)) = doc.get("vertices_") else {
        return false;
    };
    if vertices
        .iter()
        .any(|v| v.get("type_").and_then(Value::as_str) == Some("Case"))
    {
        return false;
    }
    let ids: Vec<String> = vertices
        .iter()
        .filter_map(|v| v.get("id_"))
        .map(|v| match v {
            Value::String(s) => s.clone(),
            other => other.to_string(),
        })
        .collect();
    let Some(Value::Array(relations)) = doc.get_mut("relations_") else {
        return false;
    };
    let needs_case = |r: &Value| matches!(r.get("type_").and_then(Value::as_str), Some("CITES" | "REFERENCES"));
    if !relations.iter().any(needs_case) {
        return false;
    }
    let mut new_id = SYNTHETIC_CASE_ID.to_string();
    let mut n = 1;
    while ids.contains(&new_id) {
        new_id = format!("{SYNTHETIC_CASE_ID}_{n}");
        n += 1;
    }
    for r in relations.iter_mut().filter(|r| needs_case(r)) {
        let from = r.get("from_").and_then(Value::as_str).map(str::to_string);
        if from.is_none_or(|f| !ids.contains(&f)) {
            r["from_"] = Value::String(new_id.clone());
        }
    }
    if let Some(Value::Array(vertices)) = doc.get_mut("vertices_") {
        vertices.push(json!({"id_": new_id, "type_": "Case", "label_": case_id}));
    }
    true
}

/// Prompt, complete, repair, parse leniently. Re-prompts on an unparseable
/// answer per `config.attempt_temperatures`; gateway failures quarantine the
/// case immediately.
pub fn extract_case_graph(case: &CaseDocument, gateway: &Gateway, config: &ExtractionConfig) -> ExtractionOutcome {
    let prompt = render_kg_prompt(case, config.truncation_budget);
    let mut outcome = ExtractionOutcome {
        case_id: case.case_id.clone(),
        status: ExtractionStatus::Quarantined,
        graph: None,
        report: ValidationReport::default(),
        raw_digest: String::new(),
        raw_text: String::new(),
        errors: Vec::new(),
        attempts: 0,
        truncated: prompt.truncated,
        synthesized_case: false,
    };

    for &temperature in &config.attempt_temperatures {
        outcome.attempts += 1;
        let req = gateway.request(prompt.text.clone(), temperature);
        let resp = match gateway.complete(&req) {
            Ok(r) => r,
            Err(e) => {
                outcome.errors.push(format!("gateway: {e}"));
                break;
            }
        };
        outcome.raw_digest = crate::text::sha256_hex(&[&resp.text]);
        outcome.raw_text = resp.text;
        if resp.finish_state != FinishState::Complete {
            outcome
                .errors
                .push(format!("answer finished as {:?}", resp.finish_state));
        }
        match load_object(&outcome.raw_text) {
            Ok(mut doc) => {
                outcome.synthesized_case = synthesize_case_entity(&mut doc, &case.case_id);
                let (graph, report) = graph_from_object(&doc, &case.case_id);
                outcome.status = if report.violations.is_empty() {
                    ExtractionStatus::Ok
                } else {
                    ExtractionStatus::OkWithDrops
                };
                outcome.graph = Some(graph);
                outcome.report = report;
                return outcome;
            }
            Err(e) => outcome.errors.push(e.to_string()),
        }
    }
    outcome
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionSummary {
    pub ok: usize,
    pub ok_with_drops: usize,
    pub quarantined: usize,
    /// Cases whose graph was already on disk (counted in `ok` or
    /// `ok_with_drops` as well).
    pub reused: usize,
}

/// Replaces path separators so any case id maps to a single file name.
pub fn file_stem_for(case_id: &str) -> String {
    case_id
        .chars()
        .map(|c| if matches!(c, '/' | '\\' | '\0') { '_' } else { c })
        .collect()
}

pub fn graph_path(out: &Path, case_id: &str) -> PathBuf {
    out.join(format!("{}.kg.json", file_stem_for(case_id)))
}

fn drops_path(out: &Path, case_id: &str) -> PathBuf {
    out.join("reports")
        .join(format!("{}.report.json", file_stem_for(case_id)))
}

fn quarantine_paths(out: &Path, case_id: &str) -> (PathBuf, PathBuf) {
    let q = out.join("quarantine");
    let stem = file_stem_for(case_id);
    (q.join(format!("{stem}.raw.txt")), q.join(format!("{stem}.errors.json")))
}

fn write_atomic(path: &Path, body: &[u8]) -> io::Result<()> {
    use std::io::Write;
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(body)?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// Writes the outcome's files under `out`.
pub fn persist_outcome(out: &Path, outcome: &ExtractionOutcome) -> io::Result<()> {
    let (raw_path, err_path) = quarantine_paths(out, &outcome.case_id);
    match (&outcome.graph, outcome.status) {
        (Some(graph), ExtractionStatus::Ok | ExtractionStatus::OkWithDrops) => {
            let text = serialize_graph(graph).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))?;
            write_atomic(&graph_path(out, &outcome.case_id), format!("{text}\n").as_bytes())?;
            let drops = drops_path(out, &outcome.case_id);
            if outcome.status == ExtractionStatus::OkWithDrops {
                let body = serde_json::to_vec_pretty(&outcome.report)?;
                write_atomic(&drops, &body)?;
            } else if drops.exists() {
                fs::remove_file(drops)?;
            }
            for stale in [raw_path, err_path] {
                if stale.exists() {
                    fs::remove_file(stale)?;
                }
            }
        }
        _ => {
            write_atomic(&raw_path, outcome.raw_text.as_bytes())?;
            let body = serde_json::to_vec_pretty(&json!({
                "case_id": outcome.case_id,
                "errors": outcome.errors,
                "raw_digest": outcome.raw_digest,
                "attempts": outcome.attempts,
            }))?;
            write_atomic(&err_path, &body)?;
        }
    }
    Ok(())
}

/// A graph already on disk that still parses counts as done.
fn existing_status(out: &Path, case_id: &str) -> Option<ExtractionStatus> {
    let text = fs::read_to_string(graph_path(out, case_id)).ok()?;
    parse_graph_json(&text, case_id, ParseMode::Strict).ok()?;
    Some(if drops_path(out, case_id).exists() {
        ExtractionStatus::OkWithDrops
    } else {
        ExtractionStatus::Ok
    })
}

/// Extracts every case of the corpus into `out`. Per-case failures are
/// quarantined; only I/O failures on `out` abort the run. Cases whose graph
/// is already present are not sent to the model again.
pub fn run_extraction(
    corpus: &CaseCorpus,
    gateway: &Gateway,
    out: &Path,
    config: &ExtractionConfig,
) -> io::Result<(ExtractionSummary, Vec<(String, ExtractionStatus)>)> {
    fs::create_dir_all(out)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs.max(1))
        .build()
        .map_err(io::Error::other)?;
    let results: Vec<io::Result<(String, ExtractionStatus, bool)>> = pool.install(|| {
        corpus
            .cases()
            .par_iter()
            .map(|case| {
                if let Some(status) = existing_status(out, &case.case_id) {
                    return Ok((case.case_id.clone(), status, true));
                }
                let outcome = extract_case_graph(case, gateway, config);
                persist_outcome(out, &outcome)?;
                if outcome.status == ExtractionStatus::Quarantined {
                    log::warn!("quarantined {}: {:?}", outcome.case_id, outcome.errors);
                }
                Ok((outcome.case_id, outcome.status, false))
            })
            .collect()
    });

    let mut summary = ExtractionSummary::default();
    let mut statuses = Vec::with_capacity(results.len());
    for r in results {
        let (id, status, reused) = r?;
        match status {
            ExtractionStatus::Ok => summary.ok += 1,
            ExtractionStatus::OkWithDrops => summary.ok_with_drops += 1,
            ExtractionStatus::Quarantined => summary.quarantined += 1,
        }
        if reused {
            summary.reused += 1;
        }
        statuses.push((id, status));
    }
    Ok((summary, statuses))
}

/// Loads every `*.kg.json` below `dir`, ordered by case id.
pub fn load_graphs(dir: &Path, mode: ParseMode) -> io::Result<Vec<(IracGraph, ValidationReport)>> {
    let mut out = Vec::new();
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.to_string_lossy().ends_with(".kg.json"))
        .collect();
    paths.sort();
    for p in paths {
        let name = p.file_name().unwrap().to_string_lossy();
        let case_id = name.trim_end_matches(".kg.json").to_string();
        let text = fs::read_to_string(&p)?;
        let parsed = parse_graph_json(&text, &case_id, mode)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("{}: {e}", p.display())))?;
        out.push(parsed);
    }
    out.sort_by(|a, b| a.0.case_id.cmp(&b.0.case_id));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::*;
    use crate::gateway::{record_fixture, CountingBackend, FixtureStore, LlmResponse, MockBackend, ReplayBackend};
    use crate::kg::ViolationCode;
    use std::sync::Arc;

    fn case(id: &str, text: &str) -> CaseDocument {
        CaseDocument {
            case_id: id.into(),
            jurisdiction: "NY".into(),
            opinion_text: text.into(),
            source_path: format!("{id}.txt").into(),
        }
    }

    #[test]
    fn prompt_wraps_opinion_in_delimiters() {
        let p = render_kg_prompt(&case("c", "X v. Y ..."), DEFAULT_TRUNCATION_BUDGET);
        assert!(p.text.contains("<legal_case>\nX v. Y ...\n</legal_case>"));
        assert!(!p.truncated);
        assert!(!p.text.contains("{case_opinion}"));
    }

    #[test]
    fn oversize_opinion_is_cut_at_a_paragraph() {
        let para = "word ".repeat(40);
        let text = format!("{para}\n\n{para}\n\n{para}");
        let budget = para.len() * 2 + 4;
        let (kept, truncated) = truncate_opinion(&text, budget);
        assert!(truncated);
        assert!(kept.chars().count() <= budget);
        assert_eq!(kept, format!("{para}\n\n{para}").trim_end());

        let p = render_kg_prompt(&case("c", &text), budget);
        assert!(p.truncated);
        let inner = p
            .text
            .split("<legal_case>\n")
            .nth(1)
            .unwrap()
            .split("\n</legal_case>")
            .next()
            .unwrap();
        assert!(inner.chars().count() <= budget);
    }

    #[test]
    fn truncation_without_breaks_is_a_hard_cut() {
        let text = "é".repeat(100);
        let (kept, truncated) = truncate_opinion(&text, 10);
        assert!(truncated);
        assert_eq!(kept.chars().count(), 10);
        assert_eq!(truncate_opinion("short", 10), ("short", false));
    }

    fn gateway_with(text: &str) -> Gateway {
        Gateway::new(MockBackend::constant(text), "m")
    }

    #[test]
    fn valid_answer_is_ok() {
        let gw = gateway_with(&fixture_a_extraction_response());
        let out = extract_case_graph(
            &case(FIXTURE_A_CASE_ID, FIXTURE_A_OPINION),
            &gw,
            &ExtractionConfig::default(),
        );
        assert_eq!(out.status, ExtractionStatus::Ok);
        assert_eq!(out.graph.unwrap(), fixture_a());
        assert_eq!(out.attempts, 1);
    }

    #[test]
    fn endpoint_breach_is_ok_with_drops() {
        let bad = serialize_graph(&fixture_a()).unwrap().replace(
            r#"{"id_":"E6","type_":"LEADS_TO","from_":"R1","to_":"C1"}"#,
            r#"{"id_":"E6","type_":"LEADS_TO","from_":"R1","to_":"F1"}"#,
        );
        let out = extract_case_graph(
            &case(FIXTURE_A_CASE_ID, FIXTURE_A_OPINION),
            &gateway_with(&bad),
            &ExtractionConfig::default(),
        );
        assert_eq!(out.status, ExtractionStatus::OkWithDrops);
        assert_eq!(out.report.dropped_relations, vec!["E6"]);
        assert_eq!(out.report.codes(), vec![ViolationCode::EndpointKind]);
        assert_eq!(out.graph.unwrap().relations.len(), 5);
    }

    #[test]
    fn apology_is_quarantined_after_reprompts() {
        let mock = Arc::new(MockBackend::constant("I'm sorry, I can't help with that."));
        let gw = Gateway::new(mock.clone(), "m");
        let out = extract_case_graph(&case("c", "text"), &gw, &ExtractionConfig::default());
        assert_eq!(out.status, ExtractionStatus::Quarantined);
        assert!(out.graph.is_none());
        assert_eq!(out.attempts, 3);
        assert_eq!(mock.calls(), 3);
        assert!(out.errors.iter().all(|e| e.contains("unparseable")));
    }

    #[test]
    fn reprompt_recovers() {
        let mock = Arc::new(MockBackend::scripted(vec![
            Ok(LlmResponse::complete("nope")),
            Ok(LlmResponse::complete(fixture_a_extraction_response())),
        ]));
        let gw = Gateway::new(mock.clone(), "m");
        let out = extract_case_graph(&case("c", "t"), &gw, &ExtractionConfig::default());
        assert_eq!(out.status, ExtractionStatus::Ok);
        assert_eq!(out.attempts, 2);
    }

    #[test]
    fn gateway_failure_quarantines() {
        let dir = tempfile::tempdir().unwrap();
        let gw = Gateway::new(ReplayBackend::new(FixtureStore::new(dir.path())), "m");
        let out = extract_case_graph(&case("c", "t"), &gw, &ExtractionConfig::default());
        assert_eq!(out.status, ExtractionStatus::Quarantined);
        assert_eq!(out.attempts, 1);
        assert!(out.errors[0].starts_with("gateway"));
    }

    #[test]
    fn case_entity_synthesized_for_cites() {
        let doc = r#"{"vertices_":[{"id_":"P1","type_":"CitedCase","label_":"Smith v. Jones"}],
            "relations_":[{"id_":"E1","type_":"CITES","from_":"C0","to_":"P1"}]}"#;
        let out = extract_case_graph(&case("abc", "t"), &gateway_with(doc), &ExtractionConfig::default());
        assert_eq!(out.status, ExtractionStatus::Ok, "{:?}", out.report);
        assert!(out.synthesized_case);
        let g = out.graph.unwrap();
        let c = g.entity(SYNTHETIC_CASE_ID).unwrap();
        assert_eq!(c.label, "abc");
        assert_eq!(g.relations[0].from, SYNTHETIC_CASE_ID);
    }

    #[test]
    fn no_synthesis_without_case_edges() {
        let out = extract_case_graph(
            &case(FIXTURE_A_CASE_ID, FIXTURE_A_OPINION),
            &gateway_with(&fixture_a_extraction_response()),
            &ExtractionConfig::default(),
        );
        assert!(!out.synthesized_case);
        assert_eq!(out.graph.unwrap().entities.len(), 8);
    }

    fn corpus_of(ids: &[&str]) -> CaseCorpus {
        CaseCorpus::from_cases(ids.iter().map(|id| case(id, &format!("Opinion {id}"))).collect()).unwrap()
    }

    fn record_for(store: &FixtureStore, gw: &Gateway, c: &CaseDocument, text: &str) {
        let req = gw.request(render_kg_prompt(c, DEFAULT_TRUNCATION_BUDGET).text, 0.0);
        record_fixture(&req, &LlmResponse::complete(text), store).unwrap();
    }

    #[test]
    fn batch_run_is_idempotent() {
        let fx = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        let store = FixtureStore::new(fx.path());
        let corpus = corpus_of(&["a", "b", "c"]);
        let probe = Gateway::new(MockBackend::echo(), "m");
        for c in corpus.iter() {
            let mut g = fixture_a();
            g.case_id = c.case_id.clone();
            record_for(&store, &probe, c, &serialize_graph(&g).unwrap());
        }
        let counting = Arc::new(CountingBackend::new(ReplayBackend::new(store)));
        let gw = Gateway::new(counting.clone(), "m");
        let cfg = ExtractionConfig::default();

        let (summary, _) = run_extraction(&corpus, &gw, out.path(), &cfg).unwrap();
        assert_eq!((summary.ok, summary.ok_with_drops, summary.quarantined), (3, 0, 0));
        assert_eq!(counting.calls(), 3);

        let (again, _) = run_extraction(&corpus, &gw, out.path(), &cfg).unwrap();
        assert_eq!((again.ok, again.reused), (3, 3));
        assert_eq!(counting.calls(), 3);

        let loaded = load_graphs(out.path(), ParseMode::Strict).unwrap();
        assert_eq!(loaded.len(), 3);
    }

    #[test]
    fn malformed_fixture_lands_in_quarantine() {
        let fx = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        let store = FixtureStore::new(fx.path());
        let corpus = corpus_of(&["a", "b", "c"]);
        let probe = Gateway::new(MockBackend::echo(), "m");
        for c in corpus.iter() {
            let text = if c.case_id == "b" {
                "The court's opinion is complex; I cannot produce JSON.".to_string()
            } else {
                serialize_graph(&fixture_a()).unwrap()
            };
            record_for(&store, &probe, c, &text);
        }
        let gw = Gateway::new(ReplayBackend::new(store), "m");
        let cfg = ExtractionConfig {
            jobs: 3,
            ..Default::default()
        };
        let (summary, statuses) = run_extraction(&corpus, &gw, out.path(), &cfg).unwrap();
        assert_eq!((summary.ok, summary.ok_with_drops, summary.quarantined), (2, 0, 1));
        assert_eq!(statuses.len(), 3);
        assert!(out.path().join("quarantine/b.raw.txt").exists());
        assert!(out.path().join("quarantine/b.errors.json").exists());
        assert!(!graph_path(out.path(), "b").exists());
    }

    #[test]
    fn persisted_graphs_revalidate_clean() {
        let out = tempfile::tempdir().unwrap();
        let bad = serialize_graph(&fixture_a())
            .unwrap()
            .replace(r#""to_":"C1""#, r#""to_":"F1""#);
        let outcome = extract_case_graph(&case("x", "t"), &gateway_with(&bad), &ExtractionConfig::default());
        persist_outcome(out.path(), &outcome).unwrap();
        let text = fs::read_to_string(graph_path(out.path(), "x")).unwrap();
        let (_, report) = parse_graph_json(&text, "x", ParseMode::Lenient).unwrap();
        assert!(report.is_valid_strict);
        assert_eq!(existing_status(out.path(), "x"), Some(ExtractionStatus::OkWithDrops));
    }
}
