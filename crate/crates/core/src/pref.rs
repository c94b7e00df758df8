//! Preference records: the issue's applicable rules are chosen, and rules of
//! the same case graph that a judge model calls inapplicable are rejected.

use std::collections::BTreeSet;
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::gateway::{Gateway, GatewayError};
use crate::kg::{Entity, IracGraph};
use crate::query::{all_rules, applicable_rules, get_related_facts, FactSet, QueryError, RuleSet};
use crate::sft::{facts_block, rules_block, RecordMeta, SkipReason};
use crate::shards::{issue_tasks, run_sharded, write_atomic};
use crate::text::{normalize, xml_escape};
use crate::{prompts, repair};

pub const DEFAULT_DPO_SYSTEM: &str =
    "You are a legal analyst. List the legal rules that apply to the legal issue given the case facts.";

const DPO_INSTRUCTION: &str = "Read the case facts and the legal issue below, then list the legal rules that apply.";

pub const DPO_JSONL: &str = "dpo.jsonl";
pub const DPO_PAIRS_JSONL: &str = "dpo_pairs.jsonl";

#[derive(Debug, thiserror::Error)]
pub enum PrefError {
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error("judge output unusable: {0}")]
    JudgeParseFailure(String),
    #[error("gateway: {0}")]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Applicability {
    Yes,
    No,
    Potentially,
}

impl Applicability {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "yes" => Some(Self::Yes),
            "no" => Some(Self::No),
            "potentially" => Some(Self::Potentially),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub rule_label: String,
    pub applicability: Applicability,
    pub reasoning: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrefRecord {
    pub case_id: String,
    pub issue_id: String,
    pub facts: Vec<String>,
    pub legal_issue: String,
    pub chosen_rules: Vec<String>,
    pub rejected_rules: Vec<String>,
    pub verdicts: Vec<JudgeVerdict>,
}

impl PrefRecord {
    pub fn record_id(&self) -> String {
        crate::text::record_id(&[&self.case_id, &self.issue_id])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DpoMeta {
    #[serde(flatten)]
    pub record: RecordMeta,
    pub verdicts: Vec<JudgeVerdict>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DpoTrainingRecord {
    pub system: String,
    pub user: String,
    pub chosen: String,
    pub rejected: String,
    pub meta: DpoMeta,
}

/// Rules of the graph that the issue's traversal does not reach.
pub fn candidate_rejected(graph: &IracGraph, issue_id: &str) -> Result<RuleSet, QueryError> {
    Ok(all_rules(graph).difference(&applicable_rules(graph, issue_id)?))
}

fn lines(items: &[&str]) -> String {
    items.join("\n")
}

pub fn render_judge_prompt(facts: &FactSet, issue: &Entity, chosen: &RuleSet, candidates: &RuleSet) -> String {
    prompts::fill(
        prompts::RULE_JUDGE,
        &[
            ("case_facts", &lines(&facts.labels())),
            ("legal_issue", &issue.label),
            ("chosen_rules", &lines(&chosen.labels())),
            ("rejected_rules", &lines(&candidates.labels())),
        ],
    )
}

fn field<'a>(obj: &'a serde_json::Map<String, Value>, name: &str) -> Option<&'a Value> {
    obj.iter().find(|(k, _)| k.eq_ignore_ascii_case(name)).map(|(_, v)| v)
}

/// Reads the judge's `{"Rules": [...]}` answer. Each entry's rule text is
/// matched to a candidate by normalized label and reported with the
/// candidate's own label. Only an answer without a readable `Rules` array is
/// an error. An entry whose applicability is missing or unrecognised counts
/// as `Potentially`; entries naming no candidate are ignored.
pub fn parse_judge_output(text: &str, candidates: &RuleSet) -> Result<Vec<JudgeVerdict>, PrefError> {
    let fail = |m: String| PrefError::JudgeParseFailure(m);
    let json = repair::repair_json(text).map_err(|e| fail(e.to_string()))?;
    let doc: Value = serde_json::from_str(&json).map_err(|e| fail(e.to_string()))?;
    let entries = doc
        .as_object()
        .and_then(|o| field(o, "Rules"))
        .and_then(Value::as_array)
        .ok_or_else(|| fail("no \"Rules\" array".into()))?;

    let mut verdicts = Vec::with_capacity(entries.len());
    for entry in entries {
        let Some(obj) = entry.as_object() else {
            log::debug!("judge entry is not an object: {entry}");
            continue;
        };
        let Some(rule) = field(obj, "Rule").and_then(Value::as_str) else {
            log::debug!("judge entry without a rule: {entry}");
            continue;
        };
        let wanted = normalize(rule);
        let Some(matched) = candidates.iter().find(|c| normalize(&c.label) == wanted) else {
            log::warn!("judge named {rule:?}, which is not a candidate");
            continue;
        };
        let raw = field(obj, "Applicability").and_then(Value::as_str);
        let applicability = raw.and_then(Applicability::parse).unwrap_or_else(|| {
            log::warn!("judge applicability {raw:?} for {rule:?} read as Potentially");
            Applicability::Potentially
        });
        let reasoning = field(obj, "Reasoning")
            .and_then(Value::as_str)
            .unwrap_or_default()
            .to_string();
        verdicts.push(JudgeVerdict {
            rule_label: matched.label.clone(),
            applicability,
            reasoning,
        });
    }
    Ok(verdicts)
}

#[derive(Debug, Clone, PartialEq)]
pub enum PrefAttempt {
    Record(PrefRecord),
    /// No record. `verdicts` holds whatever the judge said, if it was asked.
    Skipped {
        reason: SkipReason,
        verdicts: Vec<JudgeVerdict>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrefConfig {
    /// One temperature per judge attempt; later entries are used only after
    /// an unparseable answer.
    pub judge_temperatures: Vec<f64>,
    pub system: String,
    /// Also write one record per (chosen rule, rejected rule) pair.
    pub pairwise: bool,
    pub jobs: usize,
}

impl Default for PrefConfig {
    fn default() -> Self {
        Self {
            judge_temperatures: vec![0.0, 0.0, 0.2],
            system: DEFAULT_DPO_SYSTEM.to_string(),
            pairwise: false,
            jobs: 1,
        }
    }
}

fn sorted_labels(set: &RuleSet) -> Vec<String> {
    let mut v: Vec<String> = set.labels().into_iter().map(String::from).collect();
    v.sort();
    v
}

fn judge(prompt: &str, candidates: &RuleSet, gateway: &Gateway, temps: &[f64]) -> Result<Vec<JudgeVerdict>, PrefError> {
    let mut last = PrefError::JudgeParseFailure("no judge attempts configured".into());
    for (n, &t) in temps.iter().enumerate() {
        let resp = match gateway.complete(&gateway.request(prompt, t)) {
            Ok(r) => r,
            Err(e) if n == 0 => return Err(e.into()),
            Err(e) => {
                // A re-prompt that cannot be served leaves the earlier parse
                // failure as the outcome.
                log::debug!("judge re-prompt {n} failed: {e}");
                break;
            }
        };
        match parse_judge_output(&resp.text, candidates) {
            Ok(v) => return Ok(v),
            Err(e) => last = e,
        }
    }
    Err(last)
}

/// One preference attempt for an issue. A rule is rejected only when every
/// verdict naming it says No and its label differs from every chosen rule.
pub fn gen_pref(
    graph: &IracGraph,
    issue_id: &str,
    gateway: &Gateway,
    config: &PrefConfig,
) -> Result<PrefAttempt, PrefError> {
    let skip = |reason| {
        Ok(PrefAttempt::Skipped {
            reason,
            verdicts: Vec::new(),
        })
    };
    let facts = get_related_facts(graph, issue_id)?;
    if facts.is_empty() {
        return skip(SkipReason::NoFacts);
    }
    let chosen = applicable_rules(graph, issue_id)?;
    if chosen.is_empty() {
        return skip(SkipReason::NoRules);
    }
    let candidates = all_rules(graph).difference(&chosen);
    if candidates.is_empty() {
        return skip(SkipReason::NoCandidates);
    }
    let issue = graph
        .entity(issue_id)
        .ok_or_else(|| QueryError::NotAnIssue(issue_id.to_string()))?;

    let prompt = render_judge_prompt(&facts, issue, &chosen, &candidates);
    let verdicts = judge(&prompt, &candidates, gateway, &config.judge_temperatures)?;

    let chosen_norm: BTreeSet<String> = chosen.iter().map(|r| normalize(&r.label)).collect();
    let rejected: BTreeSet<String> = candidates
        .iter()
        .filter(|c| !chosen_norm.contains(&normalize(&c.label)))
        .filter(|c| {
            let mut mine = verdicts.iter().filter(|v| v.rule_label == c.label).peekable();
            mine.peek().is_some() && mine.all(|v| v.applicability == Applicability::No)
        })
        .map(|c| c.label.clone())
        .collect();
    if rejected.is_empty() {
        return Ok(PrefAttempt::Skipped {
            reason: SkipReason::NoRejected,
            verdicts,
        });
    }

    Ok(PrefAttempt::Record(PrefRecord {
        case_id: graph.case_id.clone(),
        issue_id: issue_id.to_string(),
        facts: facts.labels().into_iter().map(String::from).collect(),
        legal_issue: issue.label.clone(),
        chosen_rules: sorted_labels(&chosen),
        rejected_rules: rejected.into_iter().collect(),
        verdicts,
    }))
}

fn dpo_user(record: &PrefRecord) -> String {
    format!(
        "{DPO_INSTRUCTION}\n\n{}\n\n<legal_issue>{}</legal_issue>",
        facts_block(&record.facts),
        xml_escape(&record.legal_issue)
    )
}

fn sorted(v: &[String]) -> Vec<String> {
    let mut v = v.to_vec();
    v.sort();
    v
}

pub fn to_dpo_record(record: &PrefRecord, system: &str) -> DpoTrainingRecord {
    DpoTrainingRecord {
        system: system.to_string(),
        user: dpo_user(record),
        chosen: rules_block(&sorted(&record.chosen_rules), ""),
        rejected: rules_block(&sorted(&record.rejected_rules), ""),
        meta: DpoMeta {
            record: RecordMeta {
                case_id: record.case_id.clone(),
                issue_id: record.issue_id.clone(),
                record_id: record.record_id(),
            },
            verdicts: record.verdicts.clone(),
        },
    }
}

/// One record per (chosen, rejected) rule pair, in label order.
pub fn to_dpo_pairs(record: &PrefRecord, system: &str) -> Vec<DpoTrainingRecord> {
    let user = dpo_user(record);
    let mut out = Vec::new();
    for c in sorted(&record.chosen_rules) {
        for r in sorted(&record.rejected_rules) {
            out.push(DpoTrainingRecord {
                system: system.to_string(),
                user: user.clone(),
                chosen: rules_block(std::slice::from_ref(&c), ""),
                rejected: rules_block(std::slice::from_ref(&r), ""),
                meta: DpoMeta {
                    record: RecordMeta {
                        case_id: record.case_id.clone(),
                        issue_id: record.issue_id.clone(),
                        record_id: crate::text::record_id(&[&record.case_id, &record.issue_id, &c, &r]),
                    },
                    verdicts: record.verdicts.iter().filter(|v| v.rule_label == r).cloned().collect(),
                },
            });
        }
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrefSummary {
    pub records: usize,
    /// Issues without a record, for any reason (judge failures included).
    pub skipped: usize,
    pub judge_failures: usize,
    pub gateway_failures: usize,
    pub reused: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum PrefShard {
    Record(PrefRecord),
    Skipped(SkipReason),
    JudgeFailure(String),
    Gateway(String),
}

/// Generates one preference attempt per legal issue and writes
/// `<out>/dpo.jsonl` (and `<out>/dpo_pairs.jsonl` when pairwise) in
/// (case id, issue id) order.
pub fn run_pref_generation(
    graphs: &[IracGraph],
    gateway: &Gateway,
    out: &Path,
    config: &PrefConfig,
) -> io::Result<PrefSummary> {
    fs::create_dir_all(out)?;
    let tasks = issue_tasks(graphs);
    let outcomes = run_sharded(
        &tasks,
        out,
        "pref",
        gateway.model_tag(),
        config.jobs,
        |task| match gen_pref(task.graph, &task.issue_id, gateway, config) {
            Ok(PrefAttempt::Record(r)) => PrefShard::Record(r),
            Ok(PrefAttempt::Skipped { reason, .. }) => PrefShard::Skipped(reason),
            Err(PrefError::Gateway(e)) => PrefShard::Gateway(e.to_string()),
            Err(e) => PrefShard::JudgeFailure(e.to_string()),
        },
        |o| !matches!(o, PrefShard::Gateway(_)),
    )?;

    let mut summary = PrefSummary::default();
    let mut body = String::new();
    let mut pairs = String::new();
    for (task, (outcome, reused)) in tasks.iter().zip(outcomes) {
        if reused {
            summary.reused += 1;
        }
        match outcome {
            PrefShard::Record(r) => {
                summary.records += 1;
                body.push_str(&serde_json::to_string(&to_dpo_record(&r, &config.system))?);
                body.push('\n');
                if config.pairwise {
                    for p in to_dpo_pairs(&r, &config.system) {
                        pairs.push_str(&serde_json::to_string(&p)?);
                        pairs.push('\n');
                    }
                }
            }
            PrefShard::Skipped(_) => summary.skipped += 1,
            PrefShard::JudgeFailure(e) => {
                log::warn!("pref {}/{}: {e}", task.graph.case_id, task.issue_id);
                summary.skipped += 1;
                summary.judge_failures += 1;
            }
            PrefShard::Gateway(e) => {
                log::warn!("pref {}/{}: {e}", task.graph.case_id, task.issue_id);
                summary.skipped += 1;
                summary.gateway_failures += 1;
            }
        }
    }
    write_atomic(&out.join(DPO_JSONL), body.as_bytes())?;
    if config.pairwise {
        write_atomic(&out.join(DPO_PAIRS_JSONL), pairs.as_bytes())?;
    }
    Ok(summary)
}
