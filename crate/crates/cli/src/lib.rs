//! The `irac-kg` command line. Each subcommand reads one directory or file
//! and writes one output directory holding its results and a
//! `run-manifest.json`.

pub mod config;
pub mod manifest;
pub mod server;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use irac_kg::corpus::{ingest_cases, sample_by_jurisdiction, CaseCorpus, CaseDocument};
use irac_kg::dataset::{dataset_stats, read_jsonl, split_train_val, write_jsonl, SplitSpec};
use irac_kg::extraction::{load_graphs, run_extraction, ExtractionConfig, DEFAULT_TRUNCATION_BUDGET};
use irac_kg::gateway::{BackendConfig, Gateway, GatewayConfig, DEFAULT_MAX_OUTPUT};
use irac_kg::kg::{parse_graph_json, ParseMode};
use irac_kg::pref::{run_pref_generation, PrefConfig};
use irac_kg::review::ReviewStore;
use irac_kg::sft::{run_sft_generation, ChatTrainingRecord, SftConfig};
use serde_json::{json, Value};

use crate::config::PipelineConfig;
use crate::manifest::RunManifest;

pub const DEFAULT_MODEL_TAG: &str = "default";
pub const CORPUS_JSONL: &str = "corpus.jsonl";

/// A problem with how the command was invoked. Exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Debug, Parser)]
#[command(
    name = "irac-kg",
    version,
    about = "IRAC knowledge graphs and SFT/DPO data from case opinions"
)]
pub struct Cli {
    /// TOML configuration file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Read `*.txt` opinions into a corpus file.
    Ingest(IngestArgs),
    /// Draw a seeded per-jurisdiction sample from a corpus file.
    Sample(SampleArgs),
    /// Extract one graph per case with the model.
    Extract(ExtractArgs),
    /// Check graph files against the schema.
    Validate(ValidateArgs),
    /// Generate SFT records from graphs.
    GenSft(GenSftArgs),
    /// Generate judged preference records from graphs.
    GenPref(GenPrefArgs),
    /// Split a JSONL dataset into train and validation by case.
    Split(SplitArgs),
    /// Summarise a JSONL dataset.
    Stats(StatsArgs),
    /// Serve the review API.
    ReviewServe(ReviewServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GatewayKind {
    Replay,
    Live,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GatewayArgs {
    /// `replay` serves recorded fixtures only; `live` calls an HTTP endpoint
    /// (API key from IRAC_LLM_API_KEY).
    #[arg(long, value_enum)]
    pub gateway: Option<GatewayKind>,
    /// Fixture directory for the replay gateway.
    #[arg(long)]
    pub fixtures: Option<PathBuf>,
    /// Chat completion URL for the live gateway.
    #[arg(long)]
    pub endpoint: Option<String>,
    /// Response cache directory for the live gateway.
    #[arg(long)]
    pub cache: Option<PathBuf>,
    /// Model tag; part of every cache key.
    #[arg(long)]
    pub model_tag: Option<String>,
    /// Output token cap per call.
    #[arg(long)]
    pub max_output: Option<u32>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Corpus root; every `*.txt` below it is one case.
    #[arg(long)]
    pub root: Option<PathBuf>,
    /// JSON array of {file, case_id, jurisdiction}.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// Corpus file written by `ingest`.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub per_jurisdiction: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// Corpus file written by `ingest` or `sample`.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Opinion length cap in characters.
    #[arg(long)]
    pub truncation_budget: Option<usize>,
    /// Worker threads.
    #[arg(long)]
    pub jobs: Option<usize>,
    #[command(flatten)]
    pub gateway: GatewayArgs,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// Directory of `*.kg.json` files.
    #[arg(long)]
    pub kg_dir: PathBuf,
    /// Fail on any violation instead of dropping bad entities and relations.
    #[arg(long)]
    pub strict: bool,
    /// Also write the report and a run manifest here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenSftArgs {
    #[arg(long)]
    pub kg_dir: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// System message placed in every chat record.
    #[arg(long)]
    pub system: Option<String>,
    #[arg(long)]
    pub jobs: Option<usize>,
    #[command(flatten)]
    pub gateway: GatewayArgs,
}

#[derive(Debug, Args)]
pub struct GenPrefArgs {
    #[arg(long)]
    pub kg_dir: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub system: Option<String>,
    /// Also write one record per (chosen, rejected) rule pair.
    #[arg(long)]
    pub pairwise: bool,
    #[arg(long)]
    pub jobs: Option<usize>,
    #[command(flatten)]
    pub gateway: GatewayArgs,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    /// JSONL records carrying a case id.
    #[arg(long)]
    pub input: PathBuf,
    /// `train:val` case ratio, e.g. `10:1`.
    #[arg(long)]
    pub ratio: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Also write the stats and a run manifest here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReviewServeArgs {
    /// Address to listen on.
    #[arg(long)]
    pub listen: Option<String>,
    /// Directory holding one JSON file per batch.
    #[arg(long)]
    pub store: Option<PathBuf>,
    /// Graphs new batches are drawn from.
    #[arg(long)]
    pub kg_dir: Option<PathBuf>,
    /// SFT chat records new batches may include.
    #[arg(long)]
    pub sft: Option<PathBuf>,
}

/// Parses `T:V` with both parts positive.
pub fn parse_ratio(s: &str) -> anyhow::Result<(u32, u32)> {
    let parsed = s
        .split_once(':')
        .and_then(|(t, v)| Some((t.trim().parse::<u32>().ok()?, v.trim().parse::<u32>().ok()?)));
    match parsed {
        Some((t, v)) if t > 0 && v > 0 => Ok((t, v)),
        _ => Err(usage(format!("--ratio must look like 10:1, got {s:?}"))),
    }
}

fn resolve_gateway(args: &GatewayArgs, cfg: &PipelineConfig) -> anyhow::Result<GatewayConfig> {
    let base = cfg.gateway.clone();
    let model_tag = args
        .model_tag
        .clone()
        .or_else(|| base.as_ref().map(|g| g.model_tag.clone()))
        .unwrap_or_else(|| DEFAULT_MODEL_TAG.to_string());
    let backend = match args.gateway {
        Some(GatewayKind::Replay) => {
            let fixtures = args
                .fixtures
                .clone()
                .or_else(|| match base.as_ref().map(|g| &g.backend) {
                    Some(BackendConfig::Replay { fixtures }) => Some(fixtures.clone()),
                    _ => None,
                });
            BackendConfig::Replay {
                fixtures: fixtures.ok_or_else(|| usage("--gateway replay needs --fixtures DIR"))?,
            }
        }
        Some(GatewayKind::Live) => {
            let endpoint = args
                .endpoint
                .clone()
                .or_else(|| match base.as_ref().map(|g| &g.backend) {
                    Some(BackendConfig::Live { endpoint, .. }) => Some(endpoint.clone()),
                    _ => None,
                });
            BackendConfig::Live {
                endpoint: endpoint.ok_or_else(|| usage("--gateway live needs --endpoint URL"))?,
                cache: args.cache.clone(),
            }
        }
        None => match &base {
            Some(g) => g.backend.clone(),
            None => {
                return Err(usage(
                    "no gateway configured: pass --gateway replay --fixtures DIR, \
                     --gateway live --endpoint URL, or add a [gateway] table to the config file",
                ))
            }
        },
    };
    Ok(GatewayConfig {
        backend,
        model_tag,
        max_output: args
            .max_output
            .or(base.as_ref().map(|g| g.max_output))
            .unwrap_or(DEFAULT_MAX_OUTPUT),
        max_in_flight: base.as_ref().map(|g| g.max_in_flight).unwrap_or(4),
    })
}

fn build_gateway(cfg: &GatewayConfig) -> anyhow::Result<Gateway> {
    cfg.build()
        .map_err(|e| usage(format!("cannot set up the gateway: {e}")))
}

fn gateway_inputs(manifest: &mut RunManifest, cfg: &GatewayConfig) -> anyhow::Result<()> {
    if let BackendConfig::Replay { fixtures } = &cfg.backend {
        if fixtures.is_dir() {
            manifest.input("fixtures", fixtures)?;
        }
    }
    Ok(())
}

fn read_corpus(path: &Path) -> anyhow::Result<CaseCorpus> {
    let cases: Vec<CaseDocument> = read_jsonl(path).with_context(|| format!("reading corpus {}", path.display()))?;
    Ok(CaseCorpus::from_cases(cases)?)
}

fn write_corpus(corpus: &CaseCorpus, out: &Path) -> anyhow::Result<PathBuf> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let path = out.join(CORPUS_JSONL);
    write_jsonl(corpus.cases(), &path)?;
    Ok(path)
}

fn jobs(flag: Option<usize>, cfg: &PipelineConfig) -> usize {
    flag.or(cfg.jobs).unwrap_or(1).max(1)
}

fn print_json(v: &impl serde::Serialize) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p).map_err(|e| usage(format!("{e:#}")))?,
        None => PipelineConfig::default(),
    };
    match cli.command {
        Command::Ingest(a) => ingest(a, &cfg),
        Command::Sample(a) => sample(a, &cfg),
        Command::Extract(a) => extract(a, &cfg),
        Command::Validate(a) => validate(a),
        Command::GenSft(a) => gen_sft(a, &cfg),
        Command::GenPref(a) => gen_pref(a, &cfg),
        Command::Split(a) => split(a, &cfg),
        Command::Stats(a) => stats(a),
        Command::ReviewServe(a) => review_serve(a, &cfg),
    }
}

fn ingest(a: IngestArgs, cfg: &PipelineConfig) -> anyhow::Result<()> {
    let root = a
        .root
        .or_else(|| cfg.corpus.root.clone())
        .ok_or_else(|| usage("ingest needs --root DIR or [corpus] root"))?;
    let manifest_file = a.manifest.or_else(|| cfg.corpus.manifest.clone());
    let ingested = ingest_cases(&root, manifest_file.as_deref())?;
    write_corpus(&ingested.corpus, &a.out)?;
    let skipped: Vec<Value> = ingested
        .skipped
        .iter()
        .map(|s| json!({"path": s.path.strip_prefix(&root).unwrap_or(&s.path), "reason": s.reason}))
        .collect();
    fs::write(
        a.out.join("skipped.json"),
        serde_json::to_string_pretty(&skipped)? + "\n",
    )?;

    let mut m = RunManifest::new("ingest", json!({"root": root, "manifest": manifest_file}));
    m.input("root", &root)?;
    if let Some(f) = &manifest_file {
        m.input("manifest", f)?;
    }
    let summary = json!({
        "cases": ingested.corpus.len(),
        "skipped": skipped.len(),
        "strata": ingested.corpus.strata(),
    });
    m.finish(&a.out, &summary)?;
    print_json(&summary)
}

fn sample(a: SampleArgs, cfg: &PipelineConfig) -> anyhow::Result<()> {
    let per = a
        .per_jurisdiction
        .or(cfg.corpus.per_jurisdiction)
        .ok_or_else(|| usage("sample needs --per-jurisdiction N"))?;
    if per == 0 {
        return Err(usage("--per-jurisdiction must be at least 1"));
    }
    let seed = a.seed.or(cfg.corpus.seed).unwrap_or(0);
    let corpus = read_corpus(&a.corpus)?;
    let picked = sample_by_jurisdiction(&corpus, per, seed);
    write_corpus(&picked, &a.out)?;

    let mut m = RunManifest::new(
        "sample",
        json!({"corpus": a.corpus, "per_jurisdiction": per, "seed": seed}),
    );
    m.input("corpus", &a.corpus)?;
    let summary = json!({"cases": picked.len(), "strata": picked.strata()});
    m.finish(&a.out, &summary)?;
    print_json(&summary)
}

fn extract(a: ExtractArgs, cfg: &PipelineConfig) -> anyhow::Result<()> {
    let gw_cfg = resolve_gateway(&a.gateway, cfg)?;
    let gateway = build_gateway(&gw_cfg)?;
    let defaults = ExtractionConfig::default();
    let config = ExtractionConfig {
        truncation_budget: a
            .truncation_budget
            .or(cfg.extraction.truncation_budget)
            .unwrap_or(DEFAULT_TRUNCATION_BUDGET),
        attempt_temperatures: cfg
            .extraction
            .attempt_temperatures
            .clone()
            .unwrap_or(defaults.attempt_temperatures),
        jobs: jobs(a.jobs, cfg),
    };
    let corpus = read_corpus(&a.corpus)?;
    let (summary, statuses) = run_extraction(&corpus, &gateway, &a.out, &config)
        .with_context(|| format!("writing graphs to {}", a.out.display()))?;

    let mut m = RunManifest::new(
        "extract",
        json!({
            "corpus": a.corpus,
            "gateway": gw_cfg,
            "truncation_budget": config.truncation_budget,
            "attempt_temperatures": config.attempt_temperatures,
        }),
    );
    m.input("corpus", &a.corpus)?;
    gateway_inputs(&mut m, &gw_cfg)?;
    let statuses: serde_json::Map<String, Value> = statuses.into_iter().map(|(id, s)| (id, json!(s))).collect();
    m.finish(&a.out, json!({"counts": summary, "cases": statuses}))?;
    print_json(&summary)
}

fn validate(a: ValidateArgs) -> anyhow::Result<()> {
    let mode = if a.strict {
        ParseMode::Strict
    } else {
        ParseMode::Lenient
    };
    let mut paths: Vec<PathBuf> = fs::read_dir(&a.kg_dir)
        .with_context(|| format!("reading {}", a.kg_dir.display()))?
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.to_string_lossy().ends_with(".kg.json"))
        .collect();
    paths.sort();
    let mut files = Vec::new();
    let mut invalid = 0;
    for p in &paths {
        let name = p.file_name().unwrap_or_default().to_string_lossy().into_owned();
        let case_id = name.trim_end_matches(".kg.json");
        let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        let entry = match parse_graph_json(&text, case_id, mode) {
            Ok((g, report)) => {
                if !report.violations.is_empty() {
                    invalid += 1;
                }
                json!({
                    "file": name,
                    "entities": g.entities.len(),
                    "relations": g.relations.len(),
                    "violations": report.violations,
                })
            }
            Err(e) => {
                invalid += 1;
                json!({"file": name, "error": e.to_string()})
            }
        };
        files.push(entry);
    }
    let report = json!({"files": paths.len(), "invalid": invalid, "results": files});
    if let Some(out) = &a.out {
        fs::create_dir_all(out)?;
        fs::write(
            out.join("validation.json"),
            serde_json::to_string_pretty(&report)? + "\n",
        )?;
        let mut m = RunManifest::new("validate", json!({"kg_dir": a.kg_dir, "strict": a.strict}));
        m.input("kg_dir", &a.kg_dir)?;
        m.finish(out, json!({"files": paths.len(), "invalid": invalid}))?;
    }
    print_json(&report)?;
    if invalid > 0 {
        bail!("{invalid} of {} graph files have schema violations", paths.len());
    }
    Ok(())
}

fn load_kg_dir(dir: &Path) -> anyhow::Result<Vec<irac_kg::IracGraph>> {
    let graphs =
        load_graphs(dir, ParseMode::Strict).with_context(|| format!("loading graphs from {}", dir.display()))?;
    Ok(graphs.into_iter().map(|(g, _)| g).collect())
}

fn gen_sft(a: GenSftArgs, cfg: &PipelineConfig) -> anyhow::Result<()> {
    let gw_cfg = resolve_gateway(&a.gateway, cfg)?;
    let gateway = build_gateway(&gw_cfg)?;
    let mut config = SftConfig {
        jobs: jobs(a.jobs, cfg),
        ..SftConfig::default()
    };
    if let Some(s) = a.system.or_else(|| cfg.generation.sft_system.clone()) {
        config.system = s;
    }
    let graphs = load_kg_dir(&a.kg_dir)?;
    let summary = run_sft_generation(&graphs, &gateway, &a.out, &config)
        .with_context(|| format!("writing {}", a.out.display()))?;

    let mut m = RunManifest::new(
        "gen-sft",
        json!({"kg_dir": a.kg_dir, "gateway": gw_cfg, "system": config.system}),
    );
    m.input("kg_dir", &a.kg_dir)?;
    gateway_inputs(&mut m, &gw_cfg)?;
    m.finish(&a.out, &summary)?;
    print_json(&summary)
}

fn gen_pref(a: GenPrefArgs, cfg: &PipelineConfig) -> anyhow::Result<()> {
    let gw_cfg = resolve_gateway(&a.gateway, cfg)?;
    let gateway = build_gateway(&gw_cfg)?;
    let mut config = PrefConfig {
        jobs: jobs(a.jobs, cfg),
        pairwise: a.pairwise || cfg.generation.pairwise.unwrap_or(false),
        ..PrefConfig::default()
    };
    if let Some(s) = a.system.or_else(|| cfg.generation.dpo_system.clone()) {
        config.system = s;
    }
    if let Some(t) = &cfg.generation.judge_temperatures {
        config.judge_temperatures = t.clone();
    }
    let graphs = load_kg_dir(&a.kg_dir)?;
    let summary = run_pref_generation(&graphs, &gateway, &a.out, &config)
        .with_context(|| format!("writing {}", a.out.display()))?;

    let mut m = RunManifest::new(
        "gen-pref",
        json!({
            "kg_dir": a.kg_dir,
            "gateway": gw_cfg,
            "system": config.system,
            "pairwise": config.pairwise,
            "judge_temperatures": config.judge_temperatures,
        }),
    );
    m.input("kg_dir", &a.kg_dir)?;
    gateway_inputs(&mut m, &gw_cfg)?;
    m.finish(&a.out, &summary)?;
    print_json(&summary)
}

fn split(a: SplitArgs, cfg: &PipelineConfig) -> anyhow::Result<()> {
    let ratio = a
        .ratio
        .or_else(|| cfg.split.ratio.clone())
        .unwrap_or_else(|| "10:1".into());
    let (t, v) = parse_ratio(&ratio)?;
    let seed = a.seed.or(cfg.split.seed).unwrap_or(0);
    let records: Vec<Value> = read_jsonl(&a.input)?;
    let split = split_train_val(&records, &SplitSpec::new(t, v, seed)?)?;
    fs::create_dir_all(&a.out)?;
    write_jsonl(&split.train, &a.out.join("train.jsonl"))?;
    write_jsonl(&split.val, &a.out.join("val.jsonl"))?;

    let mut m = RunManifest::new("split", json!({"input": a.input, "ratio": ratio, "seed": seed}));
    m.input("input", &a.input)?;
    let summary = json!({
        "train_records": split.train.len(),
        "val_records": split.val.len(),
        "train_cases": split.train_cases,
        "val_cases": split.val_cases,
    });
    m.finish(&a.out, &summary)?;
    print_json(&summary)
}

fn stats(a: StatsArgs) -> anyhow::Result<()> {
    let records: Vec<Value> = read_jsonl(&a.input)?;
    let s = dataset_stats(&records);
    if let Some(out) = &a.out {
        fs::create_dir_all(out)?;
        fs::write(out.join("stats.json"), serde_json::to_string_pretty(&s)? + "\n")?;
        let mut m = RunManifest::new("stats", json!({"input": a.input}));
        m.input("input", &a.input)?;
        m.finish(out, &s)?;
    }
    print_json(&s)
}

fn review_serve(a: ReviewServeArgs, cfg: &PipelineConfig) -> anyhow::Result<()> {
    let listen = a
        .listen
        .or_else(|| cfg.review.listen.clone())
        .unwrap_or_else(|| "127.0.0.1:8080".into());
    let store_dir = a
        .store
        .or_else(|| cfg.review.store.clone())
        .ok_or_else(|| usage("review-serve needs --store DIR or [review] store"))?;
    let graphs = match &a.kg_dir {
        Some(d) => load_kg_dir(d)?,
        None => Vec::new(),
    };
    let records: Vec<ChatTrainingRecord> = match &a.sft {
        Some(p) => read_jsonl(p)?,
        None => Vec::new(),
    };
    let token_env = cfg.review.token_env.as_deref().unwrap_or(server::TOKEN_ENV);
    let token = std::env::var(token_env).ok().filter(|t| !t.is_empty());
    if token.is_none() {
        log::warn!("{token_env} is not set; the review API accepts unauthenticated requests");
    }
    let state = Arc::new(server::AppState {
        store: ReviewStore::open(&store_dir)?,
        graphs,
        records,
        token,
    });
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(server::serve(&listen, state))
}
