//! Page and template title normalization.

/// Normalizes a page title the way MediaWiki compares them: underscores
/// become spaces, whitespace runs collapse, and the first letter is
/// uppercased.
pub fn normalize_title(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut pending_space = false;
    for ch in raw.trim().chars() {
        let ch = if ch == '_' { ' ' } else { ch };
        if ch.is_whitespace() {
            pending_space = !out.is_empty();
            continue;
        }
        if pending_space {
            out.push(' ');
            pending_space = false;
        }
        if out.is_empty() {
            out.extend(ch.to_uppercase());
        } else {
            out.push(ch);
        }
    }
    out
}

/// Normalizes a template invocation name, dropping a leading `Template:`
/// namespace prefix.
pub fn normalize_template_name(raw: &str) -> String {
    let title = normalize_title(raw);
    let lowered = title.to_lowercase();
    for prefix in ["template:", "tmpl:"] {
        if lowered.starts_with(prefix) {
            return normalize_title(&title[prefix.len()..]);
        }
    }
    title
}

/// Dump and URL form of a title (spaces as underscores).
pub fn to_dump_form(title: &str) -> String {
    title.replace(' ', "_")
}
