//! Prompt templates. The texts live under `assets/prompts/` and are compiled
//! in; placeholders are `{name}` tokens filled by [`fill`].

pub const KG_EXTRACTION: &str = include_str!("../assets/prompts/kg_extraction.txt");
pub const SFT_GENERATION: &str = include_str!("../assets/prompts/sft_generation.txt");
pub const RULE_JUDGE: &str = include_str!("../assets/prompts/rule_judge.txt");

/// Single-pass placeholder substitution. Values are inserted literally, so a
/// value that itself contains `{name}` is never expanded again. Unknown
/// placeholders are left as they are.
pub fn fill(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + vars.iter().map(|v| v.1.len()).sum::<usize>());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let value = after.find('}').and_then(|close| {
            let name = &after[..close];
            vars.iter().find(|(k, _)| *k == name).map(|(_, v)| (*v, close))
        });
        match value {
            Some((v, close)) => {
                out.push_str(v);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}
