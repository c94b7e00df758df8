#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use irac_kg::corpus::CaseDocument;
use irac_kg::extraction::{extract_case_graph, ExtractionConfig, ExtractionStatus};
use irac_kg::fixtures::*;
use irac_kg::gateway::{CachedBackend, FixtureStore, Gateway, LlmResponse, MockBackend};
use irac_kg::pref::{gen_pref, PrefConfig};
use irac_kg::sft::gen_sft;

pub const MODEL_TAG: &str = irac_kg_cli::DEFAULT_MODEL_TAG;

pub fn fixture_case() -> CaseDocument {
    CaseDocument {
        case_id: FIXTURE_A_CASE_ID.into(),
        jurisdiction: "test".into(),
        opinion_text: FIXTURE_A_OPINION.into(),
        source_path: PathBuf::from("cases/fixture-a.txt"),
    }
}

/// Answers by prompt type: judge prompts get `verdict` for R3, SFT prompts
/// the fixture SFT document, anything else the fixture graph.
pub fn fixture_backend(verdict: &'static str) -> MockBackend {
    MockBackend::new(move |req, _| {
        let text = if req.prompt.contains("Applicability") {
            fixture_a_judge_response(verdict)
        } else if req.prompt.contains("sft_data") {
            fixture_a_sft_response()
        } else {
            fixture_a_extraction_response()
        };
        Ok(LlmResponse::complete(text))
    })
}

/// Runs every FIXTURE-A model call once through a recording cache so the
/// replay gateway can serve them.
pub fn record_fixture_a(fx: &Path) {
    let store = FixtureStore::new(fx);
    let gateway = Gateway::new(CachedBackend::new(fixture_backend("No"), store), MODEL_TAG);
    let outcome = extract_case_graph(&fixture_case(), &gateway, &ExtractionConfig::default());
    assert_eq!(outcome.status, ExtractionStatus::Ok, "{:?}", outcome.errors);
    let graph = outcome.graph.unwrap();
    gen_sft(&graph, "I1", &gateway).unwrap();
    gen_pref(&graph, "I1", &gateway, &PrefConfig::default()).unwrap();
}

/// Lays out `cases/`, `manifest.json` and `fx/` under `dir`.
pub fn seed_workspace(dir: &Path) {
    fs::create_dir_all(dir.join("cases")).unwrap();
    fs::write(dir.join("cases/fixture-a.txt"), FIXTURE_A_OPINION).unwrap();
    fs::write(
        dir.join("manifest.json"),
        r#"[{"file": "fixture-a.txt", "case_id": "fixture-a", "jurisdiction": "test"}]"#,
    )
    .unwrap();
    record_fixture_a(&dir.join("fx"));
}

pub fn irac_kg(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_irac-kg"))
        .current_dir(dir)
        .args(args)
        .env_remove("IRAC_LLM_API_KEY")
        .output()
        .expect("spawn irac-kg")
}

pub fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = irac_kg(dir, args);
    assert!(
        out.status.success(),
        "irac-kg {args:?} failed ({:?}): {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub const REPLAY: [&str; 4] = ["--gateway", "replay", "--fixtures", "fx"];

/// ingest, extract, validate, gen-sft, gen-pref and stats, all with paths
/// relative to `dir`.
pub fn run_pipeline(dir: &Path) {
    ok(
        dir,
        &[
            "ingest",
            "--root",
            "cases",
            "--manifest",
            "manifest.json",
            "--out",
            "out/corpus",
        ],
    );
    let mut extract = vec!["extract", "--corpus", "out/corpus/corpus.jsonl", "--out", "out/kg"];
    extract.extend(REPLAY);
    ok(dir, &extract);
    ok(
        dir,
        &["validate", "--kg-dir", "out/kg", "--strict", "--out", "out/validate"],
    );
    let mut sft = vec!["gen-sft", "--kg-dir", "out/kg", "--out", "out/sft"];
    sft.extend(REPLAY);
    ok(dir, &sft);
    let mut pref = vec!["gen-pref", "--kg-dir", "out/kg", "--out", "out/dpo", "--pairwise"];
    pref.extend(REPLAY);
    ok(dir, &pref);
    ok(dir, &["stats", "--input", "out/sft/sft.jsonl", "--out", "out/stats"]);
}
