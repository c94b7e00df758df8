//! Forgiving element scanner for model-written XML. Model output is often
//! not well-formed (bare `&`, stray prose, pretty-printing), so this looks
//! for matching open/close tags by name instead of running a real parser.

/// Offset of the next opening `<tag>` (or `<tag attr=...>`) at or after
/// `from`, and the offset just past its `>`.
fn find_open(text: &str, tag: &str, from: usize) -> Option<(usize, usize)> {
    let needle = format!("<{tag}");
    let mut pos = from;
    while let Some(rel) = text[pos..].find(&needle) {
        let start = pos + rel;
        let after = start + needle.len();
        match text[after..].chars().next() {
            Some('>') => return Some((start, after + 1)),
            Some(c) if c.is_whitespace() => {
                let close = text[after..].find('>')? + after;
                if !text[..close].ends_with('/') {
                    return Some((start, close + 1));
                }
                pos = close + 1;
            }
            _ => pos = after,
        }
    }
    None
}

/// Inner text of the first `<tag>...</tag>` at or after `from`, honouring
/// nesting of the same tag, plus the offset after the closing tag.
fn element_from<'a>(text: &'a str, tag: &str, from: usize) -> Option<(&'a str, usize)> {
    let (_, inner_start) = find_open(text, tag, from)?;
    let close = format!("</{tag}>");
    let mut depth = 1usize;
    let mut pos = inner_start;
    loop {
        let next_close = text[pos..].find(&close).map(|i| i + pos)?;
        match find_open(text, tag, pos) {
            Some((open, open_end)) if open < next_close => {
                depth += 1;
                pos = open_end;
            }
            _ => {
                depth -= 1;
                if depth == 0 {
                    return Some((&text[inner_start..next_close], next_close + close.len()));
                }
                pos = next_close + close.len();
            }
        }
    }
}

pub(crate) fn element<'a>(text: &'a str, tag: &str) -> Option<&'a str> {
    element_from(text, tag, 0).map(|(inner, _)| inner)
}

pub(crate) fn elements<'a>(text: &'a str, tag: &str) -> Vec<&'a str> {
    let mut out = Vec::new();
    let mut pos = 0;
    while let Some((inner, end)) = element_from(text, tag, pos) {
        out.push(inner);
        pos = end;
    }
    out
}
