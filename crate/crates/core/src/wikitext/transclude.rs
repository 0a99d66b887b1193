//! Date-matched template transclusion.
//!
//! An article revision is expanded against the template revisions that
//! were live at the article revision's timestamp, so the output reflects
//! what a reader saw on that day.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::{Arc, LazyLock};

use chrono::{DateTime, Utc};
use regex::Regex;
use serde::{Deserialize, Serialize};

use super::tree::{self, Braced, Node, Part};
use super::{Diagnostic, DiagnosticKind, RevisionText};
use crate::title::normalize_template_name;

/// Default nesting limit for template expansion.
pub const DEFAULT_MAX_DEPTH: usize = 5;

const MAX_ALIAS_HOPS: usize = 16;

/// One stored revision of a template page.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateRevision {
    pub timestamp: DateTime<Utc>,
    pub text: String,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum TemplateStoreError {
    #[error("template alias cycle through {0:?}")]
    AliasCycle(String),
}

/// Collects template revisions and aliases before freezing them into a
/// [`TemplateStore`].
#[derive(Debug, Default, Clone)]
pub struct TemplateStoreBuilder {
    revisions: HashMap<String, Vec<TemplateRevision>>,
    aliases: HashMap<String, String>,
    verbatim: HashSet<String>,
}

impl TemplateStoreBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn revision(mut self, name: &str, timestamp: DateTime<Utc>, text: impl Into<String>) -> Self {
        self.add_revision(name, timestamp, text);
        self
    }

    pub fn add_revision(&mut self, name: &str, timestamp: DateTime<Utc>, text: impl Into<String>) {
        self.revisions
            .entry(normalize_template_name(name))
            .or_default()
            .push(TemplateRevision {
                timestamp,
                text: text.into(),
            });
    }

    pub fn alias(mut self, alias: &str, target: &str) -> Self {
        self.add_alias(alias, target);
        self
    }

    pub fn add_alias(&mut self, alias: &str, target: &str) {
        let alias = normalize_template_name(alias);
        let target = normalize_template_name(target);
        if alias != target {
            self.aliases.insert(alias, target);
        }
    }

    /// Marks a template that must never be expanded, such as a citation
    /// template whose body is a module call. Its aliases still resolve.
    pub fn verbatim(mut self, name: &str) -> Self {
        self.add_verbatim(name);
        self
    }

    pub fn add_verbatim(&mut self, name: &str) {
        self.verbatim.insert(normalize_template_name(name));
    }

    /// Closes the alias map, merges the histories stored under alternative
    /// names into their canonical template, and sorts every history.
    pub fn build(self) -> Result<TemplateStore, TemplateStoreError> {
        let mut closed = HashMap::with_capacity(self.aliases.len());
        for alias in self.aliases.keys() {
            let mut current = alias;
            let mut hops = 0;
            while let Some(next) = self.aliases.get(current) {
                current = next;
                hops += 1;
                if current == alias || hops > MAX_ALIAS_HOPS {
                    return Err(TemplateStoreError::AliasCycle(alias.clone()));
                }
            }
            closed.insert(alias.clone(), current.clone());
        }

        let canonical_of = |name: &String| closed.get(name).cloned().unwrap_or_else(|| name.clone());
        let verbatim: HashSet<String> = self.verbatim.iter().map(canonical_of).collect();
        let mut revisions: HashMap<String, Vec<TemplateRevision>> = HashMap::new();
        for (name, revs) in self.revisions {
            let canonical = canonical_of(&name);
            if !verbatim.contains(&canonical) {
                revisions.entry(canonical).or_default().extend(revs);
            }
        }
        for revs in revisions.values_mut() {
            revs.sort_by_key(|r| r.timestamp);
        }
        Ok(TemplateStore {
            revisions,
            aliases: closed,
        })
    }
}

/// Read-only template history, keyed by canonical template name.
#[derive(Debug, Default, Clone)]
pub struct TemplateStore {
    revisions: HashMap<String, Vec<TemplateRevision>>,
    aliases: HashMap<String, String>,
}

impl TemplateStore {
    pub fn builder() -> TemplateStoreBuilder {
        TemplateStoreBuilder::new()
    }

    pub fn is_empty(&self) -> bool {
        self.revisions.is_empty()
    }

    pub fn len(&self) -> usize {
        self.revisions.len()
    }

    /// Canonical name for `name`, following the closed alias map.
    pub fn canonical(&self, name: &str) -> String {
        let name = normalize_template_name(name);
        self.aliases.get(&name).cloned().unwrap_or(name)
    }

    pub fn aliases(&self) -> &HashMap<String, String> {
        &self.aliases
    }

    /// Latest revision of the template with `timestamp <= at`.
    pub fn revision_at(&self, name: &str, at: DateTime<Utc>) -> Option<&TemplateRevision> {
        self.lookup(&self.canonical(name), at).map(|(_, rev)| rev)
    }

    fn lookup(&self, canonical: &str, at: DateTime<Utc>) -> Option<(usize, &TemplateRevision)> {
        let revs = self.revisions.get(canonical)?;
        let idx = revs.partition_point(|r| r.timestamp <= at);
        idx.checked_sub(1).map(|i| (i, &revs[i]))
    }
}

/// Output of [`expand_transclusions`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Expansion {
    pub text: String,
    pub diagnostics: Vec<Diagnostic>,
}

static COMMENT: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?s)<!--.*?(?:-->|\z)").expect("valid"));
static NOINCLUDE_BLOCK: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?is)<noinclude\s*>.*?(?:</noinclude\s*>|\z)").expect("valid"));
static INCLUDEONLY_BLOCK: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?is)<includeonly\s*>.*?(?:</includeonly\s*>|\z)").expect("valid")
});
static INCLUSION_TAG: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)</?(?:includeonly|noinclude|onlyinclude)\s*/?>").expect("valid")
});
static ONLYINCLUDE_BLOCK: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?is)<onlyinclude\s*>(.*?)(?:</onlyinclude\s*>|\z)").expect("valid")
});

/// Removes HTML comments.
pub fn strip_comments(text: &str) -> String {
    COMMENT.replace_all(text, "").into_owned()
}

/// Article view of a page: comments and `<includeonly>` blocks removed,
/// inclusion-control tags dropped.
fn prepare_article(text: &str) -> String {
    let text = COMMENT.replace_all(text, "");
    let text = INCLUDEONLY_BLOCK.replace_all(&text, "");
    INCLUSION_TAG.replace_all(&text, "").into_owned()
}

/// Transcluded view of a template page.
fn prepare_template_body(text: &str) -> String {
    let text = COMMENT.replace_all(text, "");
    let text = if ONLYINCLUDE_BLOCK.is_match(&text) {
        let mut kept = String::new();
        for caps in ONLYINCLUDE_BLOCK.captures_iter(&text) {
            kept.push_str(&caps[1]);
        }
        std::borrow::Cow::Owned(kept)
    } else {
        text
    };
    let text = NOINCLUDE_BLOCK.replace_all(&text, "");
    INCLUSION_TAG.replace_all(&text, "").into_owned()
}

struct ParsedBody {
    src: String,
    nodes: Vec<Node>,
}

type Args = BTreeMap<String, String>;

struct Expander<'s> {
    store: &'s TemplateStore,
    at: DateTime<Utc>,
    max_depth: usize,
    diagnostics: Vec<Diagnostic>,
    bodies: HashMap<(String, usize), Arc<ParsedBody>>,
}

/// Expands every known template in `rev` with the template revision that
/// was current at `rev.timestamp`, recursing up to `max_depth` levels.
///
/// Unknown templates and parser functions stay in place (their arguments
/// are still expanded). Hitting the depth limit leaves that template
/// verbatim and records a diagnostic.
pub fn expand_transclusions(rev: &RevisionText, store: &TemplateStore, max_depth: usize) -> Expansion {
    let src = prepare_article(&rev.wikitext);
    if !src.contains("{{") {
        return Expansion {
            text: src,
            diagnostics: Vec::new(),
        };
    }
    let nodes = tree::parse(&src);
    let mut expander = Expander {
        store,
        at: rev.timestamp,
        max_depth,
        diagnostics: Vec::new(),
        bodies: HashMap::new(),
    };
    let mut out = String::with_capacity(src.len());
    expander.render(&src, &nodes, None, 0, &mut out);
    Expansion {
        text: out,
        diagnostics: expander.diagnostics,
    }
}

impl Expander<'_> {
    fn render(&mut self, src: &str, nodes: &[Node], args: Option<&Args>, depth: usize, out: &mut String) {
        for node in nodes {
            match node {
                Node::Text(r) => out.push_str(&src[r.clone()]),
                Node::RefTag {
                    open,
                    children,
                    close,
                } => {
                    out.push_str(&src[open.clone()]);
                    self.render(src, children, args, depth, out);
                    out.push_str(&src[close.clone()]);
                }
                Node::Param(b) => self.render_param(src, b, args, depth, out),
                Node::Template(b) => self.render_template(src, b, args, depth, out),
            }
        }
    }

    fn render_part(&mut self, src: &str, part: &Part, args: Option<&Args>, depth: usize) -> String {
        let mut s = String::new();
        self.render(src, &part.nodes, args, depth, &mut s);
        s
    }

    fn render_param(&mut self, src: &str, b: &Braced, args: Option<&Args>, depth: usize, out: &mut String) {
        let name = self.render_part(src, &b.parts[0], args, depth);
        if let Some(value) = args.and_then(|a| a.get(name.trim())) {
            out.push_str(value);
        } else if let Some(default) = b.parts.get(1) {
            let value = self.render_part(src, default, args, depth);
            out.push_str(&value);
        } else {
            out.push_str("{{{");
            out.push_str(&name);
            out.push_str("}}}");
        }
    }

    fn render_literal(&mut self, src: &str, b: &Braced, args: Option<&Args>, depth: usize, out: &mut String) {
        self.render_literal_as(src, b, None, args, depth, out)
    }

    /// Literal rendering, optionally replacing the name.
    fn render_literal_as(
        &mut self,
        src: &str,
        b: &Braced,
        name: Option<&str>,
        args: Option<&Args>,
        depth: usize,
        out: &mut String,
    ) {
        out.push_str("{{");
        for (k, part) in b.parts.iter().enumerate() {
            match (k, name) {
                (0, Some(name)) => out.push_str(name),
                _ => {
                    if k > 0 {
                        out.push('|');
                    }
                    self.render(src, &part.nodes, args, depth, out);
                }
            }
        }
        out.push_str("}}");
    }

    fn render_template(&mut self, src: &str, b: &Braced, args: Option<&Args>, depth: usize, out: &mut String) {
        let raw_name = self.render_part(src, &b.parts[0], args, depth);
        let name = raw_name.trim();
        if is_parser_function(name) {
            return self.render_literal(src, b, args, depth, out);
        }
        let canonical = self.store.canonical(name);
        let Some((rev_index, _)) = self.store.lookup(&canonical, self.at) else {
            // A known alias of an unexpanded template is written under its
            // canonical name so later stages recognize it.
            let renamed = (canonical != normalize_template_name(name)).then_some(canonical.as_str());
            return self.render_literal_as(src, b, renamed, args, depth, out);
        };
        if depth >= self.max_depth {
            self.diagnostics.push(Diagnostic {
                kind: DiagnosticKind::DepthExceeded,
                offset: b.span.start,
                detail: format!("template {canonical:?} not expanded beyond depth {}", self.max_depth),
            });
            out.push_str(&src[b.span.clone()]);
            return;
        }

        let mut call_args = Args::new();
        let mut position = 0usize;
        for part in &b.parts[1..] {
            match part.eq {
                Some(eq) => {
                    let (key, value) = self.render_split(src, part, eq, args, depth);
                    call_args.insert(key.trim().to_string(), value.trim().to_string());
                }
                None => {
                    position += 1;
                    let value = self.render_part(src, part, args, depth);
                    call_args.insert(position.to_string(), value);
                }
            }
        }

        let body = self.body(&canonical, rev_index);
        self.render(&body.src, &body.nodes, Some(&call_args), depth + 1, out);
    }

    /// Renders a named argument split at its first top-level `=`.
    fn render_split(
        &mut self,
        src: &str,
        part: &Part,
        eq: usize,
        args: Option<&Args>,
        depth: usize,
    ) -> (String, String) {
        let mut key = String::new();
        let mut value = String::new();
        let mut seen_eq = false;
        for node in &part.nodes {
            match node {
                Node::Text(r) if !seen_eq && r.contains(&eq) => {
                    key.push_str(&src[r.start..eq]);
                    value.push_str(&src[eq + 1..r.end]);
                    seen_eq = true;
                }
                other => {
                    let target = if seen_eq { &mut value } else { &mut key };
                    self.render(src, std::slice::from_ref(other), args, depth, target);
                }
            }
        }
        (key, value)
    }

    fn body(&mut self, canonical: &str, rev_index: usize) -> Arc<ParsedBody> {
        let key = (canonical.to_string(), rev_index);
        if let Some(body) = self.bodies.get(&key) {
            return Arc::clone(body);
        }
        let text = &self.store.revisions[canonical][rev_index].text;
        let src = prepare_template_body(text);
        let nodes = tree::parse(&src);
        let body = Arc::new(ParsedBody { src, nodes });
        self.bodies.insert(key, Arc::clone(&body));
        body
    }
}

fn is_parser_function(name: &str) -> bool {
    if name.starts_with('#') {
        return true;
    }
    match name.find(':') {
        Some(_) => {
            let lower = name.to_lowercase();
            !(lower.starts_with("template:") || lower.starts_with("tmpl:"))
        }
        None => false,
    }
}
