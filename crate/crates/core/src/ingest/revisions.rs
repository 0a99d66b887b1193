//! Revision histories: window selection and remote retrieval.

use std::sync::Arc;

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use url::Url;

use super::IngestError;
use crate::cache::{CacheError, DiskCache};
use crate::calendar::{end_of_day, DateWindow};
use crate::http::Fetch;
use crate::wikitext::RevisionText;

/// An article to fetch, identified by language and canonical title.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ArticleRef {
    pub language: String,
    pub title: String,
}

impl ArticleRef {
    pub fn new(language: impl Into<String>, title: impl Into<String>) -> Self {
        ArticleRef {
            language: language.into(),
            title: title.into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevisionFetch {
    /// Ascending by timestamp.
    pub revisions: Vec<RevisionText>,
    pub missing: bool,
    pub diagnostics: Vec<String>,
}

pub trait RevisionSource: Send + Sync {
    /// Revisions inside `window` plus the last one before it starts.
    fn fetch_revisions(&self, article: &ArticleRef, window: &DateWindow) -> Result<RevisionFetch, IngestError>;
}

/// Sorts by timestamp (stable, so equal timestamps keep input order) and
/// keeps the revisions inside the window plus the latest one before it.
pub fn select_window(mut revisions: Vec<RevisionText>, window: &DateWindow) -> Vec<RevisionText> {
    revisions.sort_by_key(|r| r.timestamp);
    let start = window.start_instant();
    let end = window.end_instant();
    let first_inside = revisions.partition_point(|r| r.timestamp < start);
    let past_end = revisions.partition_point(|r| r.timestamp <= end);
    let from = first_inside.saturating_sub(1);
    revisions.truncate(past_end);
    revisions.drain(..from);
    revisions
}

/// The revision that defines `day`: the last one with a timestamp at or
/// before 23:59:59 UTC. `revisions` must be sorted ascending.
pub fn revision_of_day(revisions: &[RevisionText], day: NaiveDate) -> Option<&RevisionText> {
    let cutoff = end_of_day(day);
    let idx = revisions.partition_point(|r| r.timestamp <= cutoff);
    idx.checked_sub(1).map(|i| &revisions[i])
}

/// MediaWiki action API client (`prop=revisions` with continuation).
pub struct ApiRevisionSource {
    /// `api.php` endpoint per language; `{lang}` in the template is
    /// replaced by the language code.
    endpoint_template: String,
    fetch: Arc<dyn Fetch>,
    page_size: u32,
}

impl ApiRevisionSource {
    pub fn new(endpoint_template: impl Into<String>, fetch: Arc<dyn Fetch>) -> Self {
        ApiRevisionSource {
            endpoint_template: endpoint_template.into(),
            fetch,
            page_size: 50,
        }
    }

    fn endpoint(&self, language: &str) -> Result<Url, IngestError> {
        let raw = self.endpoint_template.replace("{lang}", language);
        Url::parse(&raw).map_err(|e| IngestError::Api {
            url: raw,
            message: e.to_string(),
        })
    }

    /// Walks `prop=revisions` pages for `title` with the given direction
    /// and bounds, following `continue` tokens.
    fn query(
        &self,
        language: &str,
        title: &str,
        params: &[(&str, String)],
        limit: Option<usize>,
        out: &mut RevisionFetch,
    ) -> Result<(), IngestError> {
        let mut cont: Vec<(String, String)> = Vec::new();
        loop {
            let mut url = self.endpoint(language)?;
            {
                let mut q = url.query_pairs_mut();
                q.append_pair("action", "query")
                    .append_pair("format", "json")
                    .append_pair("formatversion", "2")
                    .append_pair("prop", "revisions")
                    .append_pair("titles", title)
                    .append_pair("rvprop", "ids|timestamp|content")
                    .append_pair("rvslots", "main");
                for (k, v) in params {
                    q.append_pair(k, v);
                }
                for (k, v) in &cont {
                    q.append_pair(k, v);
                }
            }
            let body = self.fetch.get_text(url.as_str())?;
            let json: Value = serde_json::from_str(&body).map_err(|e| api_error(&url, e.to_string()))?;
            if let Some(err) = json.get("error") {
                return Err(api_error(&url, err.to_string()));
            }
            let page = json
                .pointer("/query/pages/0")
                .ok_or_else(|| api_error(&url, "missing query.pages".into()))?;
            if page.get("missing").is_some() || page.get("invalid").is_some() {
                out.missing = true;
                out.diagnostics.push(format!("{language}:{title} does not exist"));
                return Ok(());
            }
            for rev in page.get("revisions").and_then(Value::as_array).into_iter().flatten() {
                let ts = rev
                    .get("timestamp")
                    .and_then(Value::as_str)
                    .and_then(|t| DateTime::parse_from_rfc3339(t).ok())
                    .ok_or_else(|| api_error(&url, "revision without timestamp".into()))?
                    .with_timezone(&Utc);
                let text = match rev.pointer("/slots/main/content").and_then(Value::as_str) {
                    Some(t) => t.to_string(),
                    None => {
                        out.diagnostics.push(format!("{language}:{title} revision at {ts} has hidden text"));
                        String::new()
                    }
                };
                out.revisions.push(RevisionText::new(title, language, ts, text));
                if limit.is_some_and(|l| out.revisions.len() >= l) {
                    return Ok(());
                }
            }
            match json.get("continue").and_then(Value::as_object) {
                Some(c) => {
                    cont = c
                        .iter()
                        .map(|(k, v)| (k.clone(), v.as_str().map_or_else(|| v.to_string(), str::to_string)))
                        .collect();
                }
                None => return Ok(()),
            }
        }
    }

    /// Full history of a template page up to `until`, for date matching.
    pub fn template_history(
        &self,
        language: &str,
        page_title: &str,
        until: DateTime<Utc>,
    ) -> Result<RevisionFetch, IngestError> {
        let mut out = RevisionFetch::default();
        let params = [
            ("rvdir", "newer".to_string()),
            ("rvend", until.to_rfc3339()),
            ("rvlimit", self.page_size.to_string()),
        ];
        self.query(language, page_title, &params, None, &mut out)?;
        Ok(out)
    }
}

fn api_error(url: &Url, message: String) -> IngestError {
    IngestError::Api {
        url: url.to_string(),
        message,
    }
}

impl RevisionSource for ApiRevisionSource {
    fn fetch_revisions(&self, article: &ArticleRef, window: &DateWindow) -> Result<RevisionFetch, IngestError> {
        let mut before = RevisionFetch::default();
        let just_before = window.start_instant() - chrono::Duration::seconds(1);
        let params = [
            ("rvdir", "older".to_string()),
            ("rvstart", just_before.to_rfc3339()),
            ("rvlimit", "1".to_string()),
        ];
        self.query(&article.language, &article.title, &params, Some(1), &mut before)?;
        if before.missing {
            return Ok(before);
        }
        let mut inside = RevisionFetch::default();
        let params = [
            ("rvdir", "newer".to_string()),
            ("rvstart", window.start_instant().to_rfc3339()),
            ("rvend", window.end_instant().to_rfc3339()),
            ("rvlimit", self.page_size.to_string()),
        ];
        self.query(&article.language, &article.title, &params, None, &mut inside)?;
        let mut revisions = before.revisions;
        revisions.extend(inside.revisions);
        let mut diagnostics = before.diagnostics;
        diagnostics.extend(inside.diagnostics);
        Ok(RevisionFetch {
            revisions: select_window(revisions, window),
            missing: inside.missing,
            diagnostics,
        })
    }
}

/// Wraps a source with the on-disk cache, keyed by language, title and
/// window.
pub struct CachedRevisionSource<S> {
    inner: S,
    cache: DiskCache,
}

impl<S: RevisionSource> CachedRevisionSource<S> {
    pub fn new(inner: S, cache: DiskCache) -> Self {
        CachedRevisionSource { inner, cache }
    }

    pub fn inner(&self) -> &S {
        &self.inner
    }
}

impl<S: RevisionSource> RevisionSource for CachedRevisionSource<S> {
    fn fetch_revisions(&self, article: &ArticleRef, window: &DateWindow) -> Result<RevisionFetch, IngestError> {
        let key = format!("{}\t{}\t{}\t{}", article.language, article.title, window.start, window.end);
        self.cache
            .get_or_fetch("revisions", &key, || self.inner.fetch_revisions(article, window))
            .map_err(|e| match e {
                CacheError::OfflineMiss { key, .. } => IngestError::OfflineMiss(key),
                CacheError::Io(e) => IngestError::Io(e),
                CacheError::Fetch(e) => e,
            })
    }
}
