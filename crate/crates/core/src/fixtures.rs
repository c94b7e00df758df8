//! The canonical FIXTURE-A graph used across tests, the acceptance suite and
//! the benches.
//!
//! Entities F1, F2 (facts), I1 (issue), R1, R2, R3 (rules), C1 (conclusion)
//! and P1 (cited case). R1 is applied to F1, R2 addresses I1, and R3 is not
//! connected to I1 at all, which makes it the only rejected-rule candidate.

use crate::kg::{Entity, EntityKind, IracGraph, Relation, RelationKind};

pub const FIXTURE_A_CASE_ID: &str = "fixture-a";

pub const F1: &str = "Plaintiff slipped on an unmarked wet floor in the defendant's grocery store.";
pub const F2: &str = "Store employees had mopped the aisle ten minutes earlier without placing warning signs.";
pub const I1: &str = "Whether the store owner breached the duty of care owed to a business invitee.";
pub const R1: &str = "A business owner must exercise reasonable care to keep the premises safe for invitees.";
pub const R2: &str = "Failure to warn of a known hazardous condition constitutes a breach of the duty of care.";
pub const R3: &str = "Assumption of risk defense";
pub const C1: &str = "The store owner breached its duty of care and is liable for the plaintiff's injuries.";
pub const P1: &str = "Smith v. Jones Grocery Co., 123 N.E.2d 456 (1990)";

pub fn fixture_a() -> IracGraph {
    use EntityKind::*;
    use RelationKind::*;
    IracGraph {
        case_id: FIXTURE_A_CASE_ID.to_string(),
        entities: vec![
            Entity::new("F1", MaterialFact, F1),
            Entity::new("F2", MaterialFact, F2),
            Entity::new("I1", LegalIssue, I1),
            Entity::new("R1", Rule, R1),
            Entity::new("R2", Rule, R2),
            Entity::new("R3", Rule, R3),
            Entity::new("C1", Conclusion, C1),
            Entity::new("P1", CitedCase, P1),
        ],
        relations: vec![
            Relation::new("E1", ArisesFrom, "I1", "F1"),
            Relation::new("E2", ArisesFrom, "I1", "F2"),
            Relation::new("E3", AppliedTo, "R1", "F1"),
            Relation::new("E4", Addresses, "R2", "I1"),
            Relation::new("E5", DerivesFrom, "R1", "P1"),
            Relation::new("E6", LeadsTo, "R1", "C1"),
        ],
    }
}

/// A short opinion that FIXTURE-A could have been extracted from.
pub const FIXTURE_A_OPINION: &str = "\
Smith v. Green Valley Market

The plaintiff was shopping at the defendant's grocery store when she slipped \
on a wet floor. Store employees had mopped the aisle ten minutes before the \
fall and placed no warning signs.

Under Smith v. Jones Grocery Co., a business owner must exercise reasonable \
care to keep its premises safe for invitees. Failing to warn of a known \
hazard breaches that duty. The defendant's assumption of risk argument is \
not supported by the record.

We hold that the store owner breached its duty of care and is liable.
";

/// The extraction response for [`FIXTURE_A_OPINION`] as a model would
/// return it: fenced, with a line of prose in front.
pub fn fixture_a_extraction_response() -> String {
    let body = crate::kg::serialize_graph(&fixture_a()).expect("fixture is valid");
    format!("Here is the knowledge graph:\n```json\n{body}\n```")
}

/// A well-formed SFT payload echoing FIXTURE-A's I1 inputs.
pub fn fixture_a_sft_response() -> String {
    format!(
        "<sft_data><sft_input><instruction>Read the case facts below. Identify the legal issue \
         they raise and the legal rules that apply, then explain your answer.</instruction>\
         <case_facts><fact>{f1}</fact><fact>{f2}</fact></case_facts>\
         <output_format>Provide your response in pretty print XML. Use top tag legal_analysis, \
         and the following sub-tags: legal_issue: [The legal issue here]; rules: [A list of \
         rules]; explanation: [Brief explanation].</output_format></sft_input>\
         <sft_output><legal_issue>{i1}</legal_issue><rules><rule>{r1}</rule><rule>{r2}</rule>\
         </rules><explanation>The wet, unmarked floor created a hazard the store knew about \
         because its own employees mopped the aisle. An owner must keep premises reasonably \
         safe for invitees and warn of known hazards, so both rules bear directly on whether \
         the duty of care was breached.</explanation></sft_output></sft_data>",
        f1 = crate::text::xml_escape(F1),
        f2 = crate::text::xml_escape(F2),
        i1 = crate::text::xml_escape(I1),
        r1 = crate::text::xml_escape(R1),
        r2 = crate::text::xml_escape(R2),
    )
}

/// A judge response giving `verdict` for R3, the only candidate.
pub fn fixture_a_judge_response(verdict: &str) -> String {
    serde_json::json!({
        "Rules": [{
            "Rule": R3,
            "Applicability": verdict,
            "Reasoning": "The plaintiff did not knowingly encounter the hazard; the record shows no voluntary assumption of risk."
        }]
    })
    .to_string()
}
