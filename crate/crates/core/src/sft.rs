//! Instruction-tuning records: one per legal issue, built from the issue's
//! facts and applicable rules, with the instruction and explanation written
//! by the model.

use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::gateway::{Gateway, GatewayError};
use crate::kg::{Entity, IracGraph};
use crate::query::{applicable_rules, get_related_facts, FactSet, QueryError, RuleSet};
use crate::shards::{issue_tasks, run_sharded, write_atomic};
use crate::text::{normalize, xml_escape, xml_unescape};
use crate::{prompts, repair, xml};

pub const DEFAULT_SFT_SYSTEM: &str =
    "You are a legal analyst. Identify the legal issue raised by the case facts, the legal rules that apply, and explain why.";

pub const SFT_JSONL: &str = "sft.jsonl";

#[derive(Debug, thiserror::Error)]
pub enum SftError {
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error("malformed SFT XML: missing or empty <{0}>")]
    MalformedSftXml(String),
    #[error("model changed the {field}: expected {expected:?}, got {got:?}")]
    EchoMismatch {
        field: String,
        expected: Vec<String>,
        got: Vec<String>,
    },
    #[error("gateway: {0}")]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftRecord {
    pub case_id: String,
    pub issue_id: String,
    pub facts: Vec<String>,
    pub legal_issue: String,
    pub rules: Vec<String>,
    pub explanation: String,
    pub instruction: String,
    pub output_format: String,
}

impl SftRecord {
    pub fn record_id(&self) -> String {
        crate::text::record_id(&[&self.case_id, &self.issue_id])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordMeta {
    pub case_id: String,
    pub issue_id: String,
    pub record_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatTrainingRecord {
    pub system: String,
    pub user: String,
    pub assistant: String,
    pub meta: RecordMeta,
}

/// The six parts of a model-written SFT document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SftParts {
    pub instruction: String,
    pub facts: Vec<String>,
    pub output_format: String,
    pub legal_issue: String,
    pub rules: Vec<String>,
    pub explanation: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    NoFacts,
    NoRules,
    /// Preference generation only: every candidate was judged applicable
    /// or could not be judged.
    NoRejected,
    /// Preference generation only: every graph rule is already chosen.
    NoCandidates,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SftAttempt {
    Record(SftRecord),
    Skipped(SkipReason),
}

fn lines(items: &[&str]) -> String {
    items.join("\n")
}

/// The SFT generation prompt with facts and rules one per line, in id order.
pub fn render_sft_prompt(facts: &FactSet, issue: &Entity, rules: &RuleSet) -> String {
    prompts::fill(
        prompts::SFT_GENERATION,
        &[
            ("material_facts", &lines(&facts.labels())),
            ("legal_issue", &issue.label),
            ("rules", &lines(&rules.labels())),
        ],
    )
}

fn collapse(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn text_of(section: &str) -> String {
    collapse(&xml_unescape(section))
}

fn required<'a>(scope: &'a str, tag: &str) -> Result<&'a str, SftError> {
    xml::element(scope, tag)
        .filter(|s| !s.trim().is_empty())
        .ok_or_else(|| SftError::MalformedSftXml(tag.to_string()))
}

/// Items tagged `item` inside `block`; without any such tags, one item per
/// non-empty line (a leading list marker is dropped).
fn list_of(block: &str, item: &str) -> Vec<String> {
    let tagged = xml::elements(block, item);
    let raw: Vec<&str> = if tagged.is_empty() {
        block.lines().collect()
    } else {
        tagged
    };
    raw.into_iter()
        .map(|s| {
            let s = s.trim();
            s.strip_prefix("- ").or_else(|| s.strip_prefix("* ")).unwrap_or(s)
        })
        .map(text_of)
        .filter(|s| !s.is_empty())
        .collect()
}

/// Extracts the SFT parts, tolerating surrounding prose, code fences and
/// pretty-printing. Section text is unescaped and whitespace-collapsed.
pub fn parse_sft_output(text: &str) -> Result<SftParts, SftError> {
    let body = repair::strip_code_fence(text).unwrap_or(text);
    let data = required(body, "sft_data")?;
    let input = required(data, "sft_input")?;
    let instruction = text_of(required(input, "instruction")?);
    let facts = list_of(required(input, "case_facts")?, "fact");
    if facts.is_empty() {
        return Err(SftError::MalformedSftXml("case_facts".into()));
    }
    let output_format = text_of(required(input, "output_format")?);
    let output = required(data, "sft_output")?;
    let legal_issue = text_of(required(output, "legal_issue")?);
    let rules = list_of(required(output, "rules")?, "rule");
    if rules.is_empty() {
        return Err(SftError::MalformedSftXml("rules".into()));
    }
    let explanation = text_of(required(output, "explanation")?);
    Ok(SftParts {
        instruction,
        facts,
        output_format,
        legal_issue,
        rules,
        explanation,
    })
}

fn sorted_normal<S: AsRef<str>>(items: &[S]) -> Vec<String> {
    let mut v: Vec<String> = items.iter().map(|s| normalize(s.as_ref())).collect();
    v.sort();
    v
}

fn echo_check<S: AsRef<str>, T: AsRef<str>>(field: &str, expected: &[S], got: &[T]) -> Result<(), SftError> {
    let (e, g) = (sorted_normal(expected), sorted_normal(got));
    if e == g {
        Ok(())
    } else {
        Err(SftError::EchoMismatch {
            field: field.to_string(),
            expected: e,
            got: g,
        })
    }
}

/// One SFT attempt for an issue. Issues without facts or rules are skipped
/// before the model is called.
pub fn gen_sft(graph: &IracGraph, issue_id: &str, gateway: &Gateway) -> Result<SftAttempt, SftError> {
    let facts = get_related_facts(graph, issue_id)?;
    if facts.is_empty() {
        return Ok(SftAttempt::Skipped(SkipReason::NoFacts));
    }
    let rules = applicable_rules(graph, issue_id)?;
    if rules.is_empty() {
        return Ok(SftAttempt::Skipped(SkipReason::NoRules));
    }
    let issue = graph
        .entity(issue_id)
        .ok_or_else(|| QueryError::NotAnIssue(issue_id.to_string()))?;

    let prompt = render_sft_prompt(&facts, issue, &rules);
    let resp = gateway.complete(&gateway.request(prompt, 0.0))?;
    let parts = parse_sft_output(&resp.text)?;

    let fact_labels = facts.labels();
    let rule_labels = rules.labels();
    echo_check("facts", &fact_labels, &parts.facts)?;
    echo_check("legal_issue", &[issue.label.as_str()], &[parts.legal_issue.as_str()])?;
    echo_check("rules", &rule_labels, &parts.rules)?;
    if parts.explanation.is_empty() {
        return Err(SftError::MalformedSftXml("explanation".into()));
    }

    Ok(SftAttempt::Record(SftRecord {
        case_id: graph.case_id.clone(),
        issue_id: issue_id.to_string(),
        facts: fact_labels.into_iter().map(String::from).collect(),
        legal_issue: issue.label.clone(),
        rules: rule_labels.into_iter().map(String::from).collect(),
        explanation: parts.explanation,
        instruction: parts.instruction,
        output_format: parts.output_format,
    }))
}

pub(crate) fn facts_block(facts: &[String]) -> String {
    let mut s = String::from("<case_facts>\n");
    for f in facts {
        s.push_str(&format!("<fact>{}</fact>\n", xml_escape(f)));
    }
    s.push_str("</case_facts>");
    s
}

pub(crate) fn rules_block(rules: &[String], indent: &str) -> String {
    let mut s = format!("{indent}<rules>\n");
    for r in rules {
        s.push_str(&format!("{indent}  <rule>{}</rule>\n", xml_escape(r)));
    }
    s.push_str(&format!("{indent}</rules>"));
    s
}

pub fn to_chat_record(record: &SftRecord, system: &str) -> ChatTrainingRecord {
    let user = format!(
        "{}\n\n{}\n\n{}",
        record.instruction,
        facts_block(&record.facts),
        record.output_format
    );
    let assistant = format!(
        "<legal_analysis>\n  <legal_issue>{}</legal_issue>\n{}\n  <explanation>{}</explanation>\n</legal_analysis>",
        xml_escape(&record.legal_issue),
        rules_block(&record.rules, "  "),
        xml_escape(&record.explanation),
    );
    ChatTrainingRecord {
        system: system.to_string(),
        user,
        assistant,
        meta: RecordMeta {
            case_id: record.case_id.clone(),
            issue_id: record.issue_id.clone(),
            record_id: record.record_id(),
        },
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftSummary {
    pub records: usize,
    pub skipped_no_facts: usize,
    pub skipped_no_rules: usize,
    pub echo_failures: usize,
    pub parse_failures: usize,
    pub gateway_failures: usize,
    /// Issues whose outcome came from an earlier run.
    pub reused: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum SftShard {
    Record(SftRecord),
    Skipped(SkipReason),
    EchoMismatch(String),
    Malformed(String),
    Gateway(String),
}

#[derive(Debug, Clone)]
pub struct SftConfig {
    pub system: String,
    pub jobs: usize,
}

impl Default for SftConfig {
    fn default() -> Self {
        Self {
            system: DEFAULT_SFT_SYSTEM.to_string(),
            jobs: 1,
        }
    }
}

/// Generates one record attempt per legal issue and writes
/// `<out>/sft.jsonl` in (case id, issue id) order. Gateway failures are not
/// remembered, so a rerun retries them; every other outcome is.
pub fn run_sft_generation(
    graphs: &[IracGraph],
    gateway: &Gateway,
    out: &Path,
    config: &SftConfig,
) -> io::Result<SftSummary> {
    fs::create_dir_all(out)?;
    let tasks = issue_tasks(graphs);
    let outcomes = run_sharded(
        &tasks,
        out,
        "sft",
        gateway.model_tag(),
        config.jobs,
        |task| match gen_sft(task.graph, &task.issue_id, gateway) {
            Ok(SftAttempt::Record(r)) => SftShard::Record(r),
            Ok(SftAttempt::Skipped(why)) => SftShard::Skipped(why),
            Err(e @ SftError::EchoMismatch { .. }) => SftShard::EchoMismatch(e.to_string()),
            Err(SftError::Gateway(e)) => SftShard::Gateway(e.to_string()),
            Err(e) => SftShard::Malformed(e.to_string()),
        },
        |o| !matches!(o, SftShard::Gateway(_)),
    )?;

    let mut summary = SftSummary::default();
    let mut body = String::new();
    for (task, (outcome, reused)) in tasks.iter().zip(outcomes) {
        if reused {
            summary.reused += 1;
        }
        match outcome {
            SftShard::Record(r) => {
                summary.records += 1;
                body.push_str(&serde_json::to_string(&to_chat_record(&r, &config.system))?);
                body.push('\n');
            }
            SftShard::Skipped(SkipReason::NoFacts) => summary.skipped_no_facts += 1,
            SftShard::Skipped(_) => summary.skipped_no_rules += 1,
            failed => {
                let (counter, e) = match &failed {
                    SftShard::EchoMismatch(e) => (&mut summary.echo_failures, e),
                    SftShard::Gateway(e) => (&mut summary.gateway_failures, e),
                    SftShard::Malformed(e) => (&mut summary.parse_failures, e),
                    _ => unreachable!(),
                };
                *counter += 1;
                log::warn!("sft {}/{}: {e}", task.graph.case_id, task.issue_id);
            }
        }
    }
    write_atomic(&out.join(SFT_JSONL), body.as_bytes())?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{self, fixture_a, fixture_a_sft_response};
    use crate::gateway::MockBackend;
    use crate::kg::{EntityKind, Relation, RelationKind};
    use std::sync::Arc;

    fn gateway(text: String) -> (Gateway, Arc<MockBackend>) {
        let mock = Arc::new(MockBackend::constant(text));
        (Gateway::new(mock.clone(), "m"), mock)
    }

    fn record(attempt: SftAttempt) -> SftRecord {
        match attempt {
            SftAttempt::Record(r) => r,
            other => panic!("expected a record, got {other:?}"),
        }
    }

    #[test]
    fn fixture_issue_yields_record() {
        let (gw, _) = gateway(fixture_a_sft_response());
        let r = record(gen_sft(&fixture_a(), "I1", &gw).unwrap());
        assert_eq!(r.facts, [fixtures::F1, fixtures::F2]);
        assert_eq!(r.rules, [fixtures::R1, fixtures::R2]);
        assert_eq!(r.legal_issue, fixtures::I1);
        assert!(!r.explanation.is_empty());
        assert!(r.instruction.starts_with("Read the case facts"));
    }

    #[test]
    fn issue_without_facts_or_rules_is_skipped() {
        let (gw, mock) = gateway(fixture_a_sft_response());
        let mut g = fixture_a();
        g.entities
            .push(Entity::new("I2", EntityKind::LegalIssue, "Lonely issue"));
        assert_eq!(
            gen_sft(&g, "I2", &gw).unwrap(),
            SftAttempt::Skipped(SkipReason::NoFacts)
        );

        g.entities.push(Entity::new("F9", EntityKind::MaterialFact, "Fact"));
        g.relations
            .push(Relation::new("E9", RelationKind::ArisesFrom, "I2", "F9"));
        assert_eq!(
            gen_sft(&g, "I2", &gw).unwrap(),
            SftAttempt::Skipped(SkipReason::NoRules)
        );
        assert_eq!(mock.calls(), 0);
    }

    #[test]
    fn dropped_rule_is_an_echo_mismatch() {
        let doctored = fixture_a_sft_response().replace(&format!("<rule>{}</rule>", fixtures::R2), "");
        let (gw, _) = gateway(doctored);
        match gen_sft(&fixture_a(), "I1", &gw) {
            Err(SftError::EchoMismatch { field, .. }) => assert_eq!(field, "rules"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rewrapped_echo_still_matches() {
        let rewrapped = fixture_a_sft_response().replace("wet floor", "wet\n      floor");
        let (gw, _) = gateway(rewrapped);
        assert!(matches!(gen_sft(&fixture_a(), "I1", &gw), Ok(SftAttempt::Record(_))));
    }

    #[test]
    fn not_an_issue() {
        let (gw, _) = gateway(String::new());
        assert!(matches!(gen_sft(&fixture_a(), "F1", &gw), Err(SftError::Query(_))));
    }

    const PRETTY: &str = "Sure, here it is:\n```xml\n<sft_data>\n  <sft_input>\n    <instruction>\n      Do it.\n    </instruction>\n    \
        <case_facts>\n      <fact>A &amp; B</fact>\n      <fact>C</fact>\n    </case_facts>\n    <output_format>\n      Use XML.\n    </output_format>\n  \
        </sft_input>\n  <sft_output>\n    <legal_issue>\n      Is it?\n    </legal_issue>\n    <rules>\n      <rule>R</rule>\n    </rules>\n    \
        <explanation>\n      Because.\n    </explanation>\n  </sft_output>\n</sft_data>\n```";

    #[test]
    fn parses_pretty_fenced_document() {
        let p = parse_sft_output(PRETTY).unwrap();
        assert_eq!(p.instruction, "Do it.");
        assert_eq!(p.facts, ["A & B", "C"]);
        assert_eq!(p.output_format, "Use XML.");
        assert_eq!(p.legal_issue, "Is it?");
        assert_eq!(p.rules, ["R"]);
        assert_eq!(p.explanation, "Because.");
    }

    #[test]
    fn parses_compact_fixture() {
        let p = parse_sft_output(&fixture_a_sft_response()).unwrap();
        assert_eq!(p.facts.len(), 2);
        assert_eq!(p.rules.len(), 2);
    }

    #[test]
    fn untagged_fact_lines_are_accepted() {
        let doc = PRETTY.replace("<fact>A &amp; B</fact>\n      <fact>C</fact>", "- A\n      - C");
        assert_eq!(parse_sft_output(&doc).unwrap().facts, ["A", "C"]);
    }

    #[test]
    fn missing_parts_name_the_tag() {
        for tag in [
            "explanation",
            "legal_issue",
            "instruction",
            "output_format",
            "sft_output",
            "case_facts",
            "rules",
        ] {
            let open = format!("<{tag}>");
            let close = format!("</{tag}>");
            let start = PRETTY.find(&open).unwrap();
            let end = PRETTY.find(&close).unwrap() + close.len();
            let doc = format!("{}{}", &PRETTY[..start], &PRETTY[end..]);
            match parse_sft_output(&doc) {
                Err(SftError::MalformedSftXml(t)) => assert_eq!(t, tag),
                other => panic!("{tag}: {other:?}"),
            }
        }
        assert!(matches!(parse_sft_output("no xml here"), Err(SftError::MalformedSftXml(t)) if t == "sft_data"));
        let empty = PRETTY.replace("Because.", " ");
        assert!(matches!(parse_sft_output(&empty), Err(SftError::MalformedSftXml(t)) if t == "explanation"));
    }

    #[test]
    fn prompt_lists_facts_and_rules_one_per_line() {
        let g = fixture_a();
        let facts = get_related_facts(&g, "I1").unwrap();
        let rules = applicable_rules(&g, "I1").unwrap();
        let p = render_sft_prompt(&facts, g.entity("I1").unwrap(), &rules);
        assert!(p.contains(&format!(
            "<case_facts>\n{}\n{}\n</case_facts>",
            fixtures::F1,
            fixtures::F2
        )));
        assert!(p.contains(&format!("<rules>\n{}\n{}\n</rules>", fixtures::R1, fixtures::R2)));
        assert_eq!(p, render_sft_prompt(&facts, g.entity("I1").unwrap(), &rules));
    }

    #[test]
    fn chat_record_layout() {
        let (gw, _) = gateway(fixture_a_sft_response());
        let r = record(gen_sft(&fixture_a(), "I1", &gw).unwrap());
        let chat = to_chat_record(&r, DEFAULT_SFT_SYSTEM);
        assert!(chat.assistant.starts_with("<legal_analysis>"));
        assert!(chat.assistant.contains("<explanation>"));
        assert!(chat.user.starts_with(&r.instruction));
        assert!(chat.user.contains("<case_facts>\n<fact>"));
        assert!(chat.user.ends_with(&r.output_format));
        assert_eq!(chat.meta.record_id, r.record_id());
        assert_eq!(chat, to_chat_record(&r, DEFAULT_SFT_SYSTEM));
        let parsed = xml::elements(&chat.assistant, "rule");
        assert_eq!(parsed.len(), 2);
    }

    #[test]
    fn batch_run_counts_and_is_idempotent() {
        let dir = tempfile::tempdir().unwrap();
        let mock = Arc::new(MockBackend::constant(fixture_a_sft_response()));
        let gw = Gateway::new(mock.clone(), "m");
        let summary = run_sft_generation(&[fixture_a()], &gw, dir.path(), &SftConfig::default()).unwrap();
        assert_eq!(
            (
                summary.records,
                summary.skipped_no_facts,
                summary.skipped_no_rules,
                summary.echo_failures
            ),
            (1, 0, 0, 0)
        );
        let first = fs::read(dir.path().join(SFT_JSONL)).unwrap();
        assert_eq!(first.iter().filter(|b| **b == b'\n').count(), 1);

        let again = run_sft_generation(&[fixture_a()], &gw, dir.path(), &SftConfig::default()).unwrap();
        assert_eq!(mock.calls(), 1);
        assert_eq!(again.reused, 1);
        assert_eq!(fs::read(dir.path().join(SFT_JSONL)).unwrap(), first);
    }

    #[test]
    fn gateway_failures_are_retried_on_rerun() {
        let dir = tempfile::tempdir().unwrap();
        let failing = Gateway::new(MockBackend::scripted(Vec::new()), "m");
        let s = run_sft_generation(&[fixture_a()], &failing, dir.path(), &SftConfig::default()).unwrap();
        assert_eq!((s.records, s.gateway_failures), (0, 1));
        let (gw, mock) = gateway(fixture_a_sft_response());
        let s = run_sft_generation(&[fixture_a()], &gw, dir.path(), &SftConfig::default()).unwrap();
        assert_eq!((s.records, mock.calls()), (1, 1));
    }
}
