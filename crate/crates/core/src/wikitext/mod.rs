//! Wikitext processing: date-matched transclusion and citation extraction.

mod extract;
mod transclude;
pub(crate) mod tree;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

pub use extract::{
    extract_all, extract_nonref_sources, extract_references, find_bare_urls, template_instances, ExtractConfig,
    Extraction, NonRefAllowlist, TemplateInstance, DEFAULT_CITATION_TEMPLATES, DEFAULT_EXCLUDED_PARAMS, DEFAULT_URL_PARAMS,
};
pub use transclude::{
    expand_transclusions, strip_comments, Expansion, TemplateRevision, TemplateStore, TemplateStoreBuilder,
    TemplateStoreError, DEFAULT_MAX_DEPTH,
};

/// One historical revision of an article.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevisionText {
    pub article_id: String,
    pub language: String,
    pub timestamp: DateTime<Utc>,
    pub wikitext: String,
}

impl RevisionText {
    pub fn new(
        article_id: impl Into<String>,
        language: impl Into<String>,
        timestamp: DateTime<Utc>,
        wikitext: impl Into<String>,
    ) -> Self {
        RevisionText {
            article_id: article_id.into(),
            language: language.into(),
            timestamp,
            wikitext: wikitext.into(),
        }
    }
}

/// One citation placement in a revision.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceOccurrence {
    /// Absolute http(s) URLs, deduplicated, in order of appearance.
    pub urls: Vec<String>,
    pub ref_name: Option<String>,
    /// Canonical name of the citation or source template, if any.
    pub via_template: Option<String>,
    pub in_ref_tag: bool,
    /// Byte offset in the expanded text.
    pub byte_offset: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagnosticKind {
    DepthExceeded,
    UnclosedRef,
    StrayRefClose,
    UndefinedNamedRef,
}

/// A non-fatal problem found while expanding or extracting.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub kind: DiagnosticKind,
    pub offset: usize,
    pub detail: String,
}
