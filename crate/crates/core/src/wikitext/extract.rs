//! Citation extraction from expanded wikitext.

use std::collections::{BTreeSet, HashMap};
use std::ops::Range;
use std::sync::LazyLock;

use regex::Regex;

use super::tree::{self, literal_span_end, Braced};
use super::{Diagnostic, DiagnosticKind, ReferenceOccurrence};
use crate::title::normalize_template_name;

/// Citation templates recognized when no per-language list is configured.
pub const DEFAULT_CITATION_TEMPLATES: &[&str] = &[
    "Cite web",
    "Cite news",
    "Cite book",
    "Cite journal",
    "NHLE",
    "Cite magazine",
];

/// Citation-template parameters whose values are credited as source URLs.
pub const DEFAULT_URL_PARAMS: &[&str] = &["url", "URL", "website"];

/// Archive parameters. Their URLs point at the archive host, not the source.
pub const DEFAULT_EXCLUDED_PARAMS: &[&str] = &[
    "archive-url",
    "archiveurl",
    "archive_url",
    "archive url",
    "ArchiveURL",
];

static REF_TAG: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"<ref(\s[^>]*?)?(/)?>|</ref\s*>").expect("ref tag pattern is valid")
});

static REF_ATTR: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r#"(?i)\b(name|group)\s*=\s*(?:"([^"]*)"|'([^']*)'|([^\s"'/>]+))"#)
        .expect("ref attribute pattern is valid")
});

static BARE_URL: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r#"(?i)https?://[^\s<>\[\]{}|"]+"#).expect("url pattern is valid")
});

/// Per-language extraction settings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtractConfig {
    citation_templates: BTreeSet<String>,
    url_params: BTreeSet<String>,
    excluded_params: BTreeSet<String>,
    /// Whether `<ref group=...>` footnotes count as references.
    pub include_groups: bool,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        ExtractConfig::new(DEFAULT_CITATION_TEMPLATES, DEFAULT_URL_PARAMS)
    }
}

impl ExtractConfig {
    pub fn new<T, P>(citation_templates: T, url_params: P) -> Self
    where
        T: IntoIterator,
        T::Item: AsRef<str>,
        P: IntoIterator,
        P::Item: AsRef<str>,
    {
        ExtractConfig {
            citation_templates: citation_templates
                .into_iter()
                .map(|t| normalize_template_name(t.as_ref()))
                .collect(),
            url_params: url_params.into_iter().map(|p| p.as_ref().trim().to_string()).collect(),
            excluded_params: DEFAULT_EXCLUDED_PARAMS.iter().map(|p| p.to_string()).collect(),
            include_groups: true,
        }
    }

    pub fn with_excluded_params<P>(mut self, params: P) -> Self
    where
        P: IntoIterator,
        P::Item: AsRef<str>,
    {
        self.excluded_params = params.into_iter().map(|p| p.as_ref().trim().to_string()).collect();
        self
    }

    pub fn with_groups(mut self, include: bool) -> Self {
        self.include_groups = include;
        self
    }

    pub fn is_citation_template(&self, name: &str) -> bool {
        self.citation_templates.contains(&normalize_template_name(name))
    }
}

/// `(template, parameter)` pairs whose URLs are sources even outside refs.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NonRefAllowlist {
    pairs: BTreeSet<(String, String)>,
}

impl NonRefAllowlist {
    pub fn new<I, A, B>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (A, B)>,
        A: AsRef<str>,
        B: AsRef<str>,
    {
        NonRefAllowlist {
            pairs: pairs
                .into_iter()
                .map(|(t, p)| (normalize_template_name(t.as_ref()), p.as_ref().trim().to_string()))
                .collect(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    fn params_for<'a>(&'a self, template: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.pairs
            .range((template.to_string(), String::new())..)
            .take_while(move |(t, _)| t == template)
            .map(|(_, p)| p.as_str())
    }
}

/// Occurrences sorted by offset, plus anything odd found on the way.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Extraction {
    pub occurrences: Vec<ReferenceOccurrence>,
    pub diagnostics: Vec<Diagnostic>,
}

struct ParamInfo {
    key: String,
    value: Range<usize>,
}

struct TemplateInfo {
    span: Range<usize>,
    name: String,
    params: Vec<ParamInfo>,
    is_citation: bool,
    inside_citation: bool,
}

struct Document {
    text: String,
    templates: Vec<TemplateInfo>,
}

impl Document {
    /// Blanks comments and literal spans (keeping byte offsets) and indexes
    /// every template.
    fn new(raw: &str, citation: impl Fn(&str) -> bool) -> Self {
        let text = blank_literal_spans(raw);
        let nodes = tree::parse(&text);
        let mut templates = Vec::new();
        let mut citation_ends: Vec<usize> = Vec::new();
        tree::walk_templates(&nodes, &mut |b: &Braced, _| {
            citation_ends.retain(|&end| end > b.span.start);
            let name = normalize_template_name(&text[b.parts[0].span.clone()]);
            let is_citation = citation(&name);
            templates.push(TemplateInfo {
                span: b.span.clone(),
                params: params_of(&text, b),
                name,
                is_citation,
                inside_citation: !citation_ends.is_empty(),
            });
            if is_citation {
                citation_ends.push(b.span.end);
            }
        });
        templates.sort_by_key(|t| t.span.start);
        Document { text, templates }
    }

    fn templates_within<'a>(&'a self, range: &'a Range<usize>) -> impl Iterator<Item = &'a TemplateInfo> + 'a {
        let first = self.templates.partition_point(|t| t.span.start < range.start);
        self.templates[first..]
            .iter()
            .take_while(move |t| t.span.start < range.end)
            .filter(move |t| t.span.end <= range.end)
    }
}

fn params_of(text: &str, b: &Braced) -> Vec<ParamInfo> {
    let mut position = 0usize;
    b.parts[1..]
        .iter()
        .map(|part| match part.eq {
            Some(eq) => ParamInfo {
                key: text[part.span.start..eq].trim().to_string(),
                value: trim_range(text, eq + 1..part.span.end),
            },
            None => {
                position += 1;
                ParamInfo {
                    key: position.to_string(),
                    value: trim_range(text, part.span.clone()),
                }
            }
        })
        .collect()
}

fn trim_range(text: &str, range: Range<usize>) -> Range<usize> {
    let slice = &text[range.clone()];
    let start = range.start + (slice.len() - slice.trim_start().len());
    let end = range.end - (slice.len() - slice.trim_end().len());
    start..end.max(start)
}

fn blank_literal_spans(raw: &str) -> String {
    if !raw.contains('<') {
        return raw.to_string();
    }
    let lower = raw.to_ascii_lowercase();
    let mut bytes = raw.as_bytes().to_vec();
    let mut i = 0;
    while let Some(p) = lower[i..].find('<') {
        let at = i + p;
        match literal_span_end(&lower, at, raw.len()) {
            Some(end) => {
                blank(&mut bytes, at..end);
                i = end;
            }
            None => i = at + 1,
        }
    }
    String::from_utf8(bytes).expect("blanking whole spans keeps UTF-8 valid")
}

fn blank(bytes: &mut [u8], range: Range<usize>) {
    bytes[range].fill(b' ');
}

/// Bare `http(s)://` links inside `range`, with their absolute offsets.
pub fn find_bare_urls(text: &str, range: Range<usize>) -> Vec<(usize, String)> {
    BARE_URL
        .find_iter(&text[range.clone()])
        .filter_map(|m| {
            let url = trim_url(m.as_str());
            let host_part = url.split_once("://").map_or("", |(_, rest)| rest);
            (!host_part.is_empty()).then(|| (range.start + m.start(), url.to_string()))
        })
        .collect()
}

fn trim_url(mut url: &str) -> &str {
    loop {
        let trimmed = url.trim_end_matches(['.', ',', ';', ':', '!', '?', '\'']);
        let trimmed = if trimmed.ends_with(')') && !trimmed.contains('(') {
            &trimmed[..trimmed.len() - 1]
        } else {
            trimmed
        };
        if trimmed.len() == url.len() {
            return url;
        }
        url = trimmed;
    }
}

fn dedup_in_order(mut found: Vec<(usize, String)>) -> Vec<String> {
    found.sort_by_key(|(pos, _)| *pos);
    let mut seen = BTreeSet::new();
    found
        .into_iter()
        .filter_map(|(_, url)| seen.insert(url.clone()).then_some(url))
        .collect()
}

enum RefToken {
    Open { at: usize, end: usize, attrs: String },
    SelfClosing { at: usize, attrs: String },
    Close { at: usize, end: usize },
}

struct RefElement {
    tag_start: usize,
    body: Range<usize>,
    name: Option<String>,
    group: Option<String>,
}

fn ref_attr(attrs: &str, which: &str) -> Option<String> {
    REF_ATTR.captures_iter(attrs).find_map(|c| {
        c[1].eq_ignore_ascii_case(which).then(|| {
            c.get(2)
                .or_else(|| c.get(3))
                .or_else(|| c.get(4))
                .map_or(String::new(), |m| m.as_str().trim().to_string())
        })
    })
}

/// Extracts one occurrence per `<ref>` body, one per named-ref reuse, and
/// one per citation template placed outside any ref.
pub fn extract_references(expanded: &str, config: &ExtractConfig) -> Extraction {
    let doc = Document::new(expanded, |name| config.is_citation_template(name));
    let mut diagnostics = Vec::new();
    let (refs, reuses, ref_spans) = scan_refs(&doc.text, config, &mut diagnostics);

    let mut occurrences = Vec::new();
    let mut definitions: HashMap<RefKey, RefSources> = HashMap::new();

    for r in &refs {
        let (urls, via_template) = ref_body_sources(&doc, &r.body, config);
        if let Some(name) = &r.name {
            definitions
                .entry((r.group.clone(), name.clone()))
                .or_insert_with(|| (urls.clone(), via_template.clone()));
        }
        occurrences.push(ReferenceOccurrence {
            urls,
            ref_name: r.name.clone(),
            via_template,
            in_ref_tag: true,
            byte_offset: r.tag_start,
        });
    }

    for (at, group, name) in reuses {
        let key = (group, name.clone());
        let (urls, via_template) = match definitions.get(&key) {
            Some(found) => found.clone(),
            None => {
                diagnostics.push(Diagnostic {
                    kind: DiagnosticKind::UndefinedNamedRef,
                    offset: at,
                    detail: format!("reference name {name:?} is never defined"),
                });
                (Vec::new(), None)
            }
        };
        occurrences.push(ReferenceOccurrence {
            urls,
            ref_name: Some(name),
            via_template,
            in_ref_tag: true,
            byte_offset: at,
        });
    }

    for t in &doc.templates {
        if !t.is_citation || t.inside_citation || inside_any(&ref_spans, t.span.start) {
            continue;
        }
        let found = citation_urls(&doc.text, t, config);
        occurrences.push(ReferenceOccurrence {
            urls: dedup_in_order(found),
            ref_name: None,
            via_template: Some(t.name.clone()),
            in_ref_tag: false,
            byte_offset: t.span.start,
        });
    }

    occurrences.sort_by_key(|o| o.byte_offset);
    diagnostics.sort_by_key(|d| d.offset);
    Extraction {
        occurrences,
        diagnostics,
    }
}

type Reuse = (usize, Option<String>, String);

/// `(group, name)` of a named reference.
type RefKey = (Option<String>, String);

/// URLs and citation template of a reference body.
type RefSources = (Vec<String>, Option<String>);

fn scan_refs(
    text: &str,
    config: &ExtractConfig,
    diagnostics: &mut Vec<Diagnostic>,
) -> (Vec<RefElement>, Vec<Reuse>, Vec<Range<usize>>) {
    let lower = text.to_ascii_lowercase();
    let tokens: Vec<RefToken> = REF_TAG
        .captures_iter(&lower)
        .map(|c| {
            let m = c.get(0).expect("whole match");
            let attrs = c.get(1).map_or(String::new(), |a| text[a.range()].to_string());
            if m.as_str().starts_with("</") {
                RefToken::Close {
                    at: m.start(),
                    end: m.end(),
                }
            } else if c.get(2).is_some() {
                RefToken::SelfClosing { at: m.start(), attrs }
            } else {
                RefToken::Open {
                    at: m.start(),
                    end: m.end(),
                    attrs,
                }
            }
        })
        .collect();

    let mut refs = Vec::new();
    let mut reuses = Vec::new();
    let mut spans = Vec::new();
    let mut open: Option<(usize, usize, String)> = None;

    let mut finish = |open: (usize, usize, String), body_end: usize, span_end: usize, refs: &mut Vec<RefElement>| {
        let (at, body_start, attrs) = open;
        spans.push(at..span_end);
        let group = ref_attr(&attrs, "group").filter(|g| !g.is_empty());
        if group.is_some() && !config.include_groups {
            return None;
        }
        let name = ref_attr(&attrs, "name").filter(|n| !n.is_empty());
        let body = body_start..body_end;
        if let Some(name) = name.as_ref().filter(|_| text[body.clone()].trim().is_empty()) {
            return Some((at, group, name.clone()));
        }
        refs.push(RefElement {
            tag_start: at,
            body,
            name,
            group,
        });
        None
    };

    for token in tokens {
        match token {
            RefToken::Open { at, end, attrs } => {
                if let Some(prev) = open.take() {
                    diagnostics.push(unclosed(prev.0));
                    reuses.extend(finish(prev, at, at, &mut refs));
                }
                open = Some((at, end, attrs));
            }
            RefToken::SelfClosing { at, attrs } => {
                if let Some(prev) = open.take() {
                    diagnostics.push(unclosed(prev.0));
                    reuses.extend(finish(prev, at, at, &mut refs));
                }
                let group = ref_attr(&attrs, "group").filter(|g| !g.is_empty());
                if group.is_some() && !config.include_groups {
                    continue;
                }
                match ref_attr(&attrs, "name").filter(|n| !n.is_empty()) {
                    Some(name) => reuses.push((at, group, name)),
                    None => diagnostics.push(Diagnostic {
                        kind: DiagnosticKind::UndefinedNamedRef,
                        offset: at,
                        detail: "self-closing ref without a name".to_string(),
                    }),
                }
            }
            RefToken::Close { at, end } => match open.take() {
                Some(prev) => reuses.extend(finish(prev, at, end, &mut refs)),
                None => diagnostics.push(Diagnostic {
                    kind: DiagnosticKind::StrayRefClose,
                    offset: at,
                    detail: "closing ref tag without an opening tag".to_string(),
                }),
            },
        }
    }
    if let Some(prev) = open.take() {
        diagnostics.push(unclosed(prev.0));
        reuses.extend(finish(prev, text.len(), text.len(), &mut refs));
    }
    spans.sort_by_key(|s| s.start);
    (refs, reuses, spans)
}

fn unclosed(at: usize) -> Diagnostic {
    Diagnostic {
        kind: DiagnosticKind::UnclosedRef,
        offset: at,
        detail: "ref tag closed implicitly".to_string(),
    }
}

fn inside_any(spans: &[Range<usize>], pos: usize) -> bool {
    let idx = spans.partition_point(|s| s.start <= pos);
    idx > 0 && spans[idx - 1].contains(&pos)
}

fn citation_urls(text: &str, t: &TemplateInfo, config: &ExtractConfig) -> Vec<(usize, String)> {
    t.params
        .iter()
        .filter(|p| config.url_params.contains(&p.key))
        .flat_map(|p| find_bare_urls(text, p.value.clone()))
        .collect()
}

fn ref_body_sources(doc: &Document, body: &Range<usize>, config: &ExtractConfig) -> (Vec<String>, Option<String>) {
    let mut found = Vec::new();
    let mut via_template = None;
    let mut masked = doc.text[body.clone()].as_bytes().to_vec();
    let local = |r: &Range<usize>| r.start - body.start..r.end - body.start;
    for t in doc.templates_within(body) {
        if t.is_citation && !t.inside_citation {
            via_template.get_or_insert_with(|| t.name.clone());
            found.extend(citation_urls(&doc.text, t, config));
            blank(&mut masked, local(&t.span));
        } else if !t.inside_citation {
            for p in t.params.iter().filter(|p| config.excluded_params.contains(&p.key)) {
                blank(&mut masked, local(&p.value));
            }
        }
    }
    let masked = String::from_utf8_lossy(&masked);
    found.extend(
        find_bare_urls(&masked, 0..masked.len())
            .into_iter()
            .map(|(pos, url)| (pos + body.start, url)),
    );
    (dedup_in_order(found), via_template)
}

/// Sources placed outside references through allowlisted template
/// parameters, such as the data-source line under a statistics chart.
pub fn extract_nonref_sources(expanded: &str, allowlist: &NonRefAllowlist) -> Vec<ReferenceOccurrence> {
    if allowlist.is_empty() {
        return Vec::new();
    }
    let doc = Document::new(expanded, |_| false);
    let mut diagnostics = Vec::new();
    let (_, _, ref_spans) = scan_refs(&doc.text, &ExtractConfig::default(), &mut diagnostics);
    let mut out = Vec::new();
    for t in &doc.templates {
        if inside_any(&ref_spans, t.span.start) {
            continue;
        }
        let wanted: BTreeSet<&str> = allowlist.params_for(&t.name).collect();
        if wanted.is_empty() {
            continue;
        }
        let found: Vec<(usize, String)> = t
            .params
            .iter()
            .filter(|p| wanted.contains(p.key.as_str()))
            .flat_map(|p| find_bare_urls(&doc.text, p.value.clone()))
            .collect();
        if found.is_empty() {
            continue;
        }
        out.push(ReferenceOccurrence {
            urls: dedup_in_order(found),
            ref_name: None,
            via_template: Some(t.name.clone()),
            in_ref_tag: false,
            byte_offset: t.span.start,
        });
    }
    out
}

/// A template invocation with its arguments, as written in the text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateInstance {
    /// Normalized name, without the `Template:` prefix.
    pub name: String,
    pub byte_offset: usize,
    /// `(key, value)` pairs; positional arguments are keyed `1`, `2`, ...
    pub params: Vec<(String, String)>,
}

/// Every template invocation in `text`, in order of appearance. Comments
/// and literal spans are ignored.
pub fn template_instances(text: &str) -> Vec<TemplateInstance> {
    let doc = Document::new(text, |_| false);
    doc.templates
        .iter()
        .map(|t| TemplateInstance {
            name: t.name.clone(),
            byte_offset: t.span.start,
            params: t
                .params
                .iter()
                .map(|p| (p.key.clone(), doc.text[p.value.clone()].to_string()))
                .collect(),
        })
        .collect()
}

/// References plus allowlisted non-reference sources, merged by offset.
pub fn extract_all(expanded: &str, config: &ExtractConfig, allowlist: &NonRefAllowlist) -> Extraction {
    let mut extraction = extract_references(expanded, config);
    let extra = extract_nonref_sources(expanded, allowlist);
    if !extra.is_empty() {
        extraction.occurrences.extend(extra);
        extraction.occurrences.sort_by_key(|o| o.byte_offset);
    }
    extraction
}
