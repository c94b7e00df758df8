//! Recovery of a JSON object from chatty model output.

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RepairError {
    #[error("no JSON object found in model output")]
    NoObjectFound,
}

/// Content of the first fenced code block, if any. The info string on the
/// opening fence (e.g. `json`) is discarded. An unterminated fence yields the
/// rest of the text.
pub fn strip_code_fence(text: &str) -> Option<&str> {
    let start = text.find("```")?;
    let after = &text[start + 3..];
    let body_start = after.find('\n').map(|i| i + 1).unwrap_or(after.len());
    let body = &after[body_start..];
    let body = match body.find("```") {
        Some(end) => &body[..end],
        None => body,
    };
    Some(body.trim())
}

/// End offset (exclusive) of the balanced `{...}` span opening at `start`.
fn balanced_end(bytes: &[u8], start: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escape = false;
    for (i, &b) in bytes.iter().enumerate().skip(start) {
        if in_string {
            match (escape, b) {
                (true, _) => escape = false,
                (false, b'\\') => escape = true,
                (false, b'"') => in_string = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => {
                depth = depth.checked_sub(1)?;
                if depth == 0 {
                    return Some(i + 1);
                }
            }
            _ => {}
        }
    }
    None
}

const MAX_CANDIDATE_STARTS: usize = 64;

fn scan(text: &str) -> Option<&str> {
    let bytes = text.as_bytes();
    let mut first_balanced = None;
    let starts = text.match_indices('{').map(|(i, _)| i).take(MAX_CANDIDATE_STARTS);
    for start in starts {
        // skip braces nested inside an earlier candidate we already kept
        if let Some((s, e)) = first_balanced {
            if start > s && start < e {
                continue;
            }
        }
        let Some(end) = balanced_end(bytes, start) else {
            continue;
        };
        let span = &text[start..end];
        if serde_json::from_str::<serde_json::Value>(span).is_ok() {
            return Some(span);
        }
        if first_balanced.is_none() {
            first_balanced = Some((start, end));
        }
    }
    first_balanced.map(|(s, e)| &text[s..e])
}

/// Strips code fences and surrounding prose and returns the outermost
/// balanced `{...}` span. Spans that parse as JSON win over earlier ones
/// that do not; the returned text may still fail to parse.
pub fn repair_json(raw: &str) -> Result<String, RepairError> {
    if let Some(body) = strip_code_fence(raw) {
        if let Some(span) = scan(body) {
            return Ok(span.to_string());
        }
    }
    scan(raw).map(str::to_string).ok_or(RepairError::NoObjectFound)
}
