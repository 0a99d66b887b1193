//! Alternative titles of corpus articles.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, Read};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use url::Url;

use super::IngestError;
use crate::corpus::sqldump::{SqlInsertReader, SqlValue};
use crate::corpus::{CorpusSpec, ARTICLE_NAMESPACE};
use crate::http::Fetch;
use crate::title::normalize_title;

/// Longest redirect chain followed to reach a corpus article.
pub const MAX_REDIRECT_CHAIN: usize = 3;

/// Title to canonical corpus title, for one language. Canonical titles
/// map to themselves.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RedirectMap {
    pub language: String,
    canonical: BTreeSet<String>,
    alternatives: BTreeMap<String, String>,
}

impl RedirectMap {
    /// Canonical corpus title for `title`, or None outside the corpus.
    pub fn resolve(&self, title: &str) -> Option<&str> {
        let title = normalize_title(title);
        self.resolve_normalized(&title)
    }

    /// Like [`resolve`](Self::resolve) for a title already normalized.
    pub fn resolve_normalized(&self, title: &str) -> Option<&str> {
        if let Some(c) = self.canonical.get(title) {
            return Some(c);
        }
        self.alternatives.get(title).map(String::as_str)
    }

    pub fn alternatives(&self) -> &BTreeMap<String, String> {
        &self.alternatives
    }

    pub fn canonical_titles(&self) -> impl Iterator<Item = &str> {
        self.canonical.iter().map(String::as_str)
    }

    /// Every title (canonical and alternative) that folds into `canonical`.
    pub fn titles_of(&self, canonical: &str) -> Vec<String> {
        let mut out = vec![canonical.to_string()];
        out.extend(
            self.alternatives
                .iter()
                .filter(|(_, c)| c.as_str() == canonical)
                .map(|(a, _)| a.clone()),
        );
        out
    }

    /// Copies the alternative titles into the corpus.
    pub fn apply_to(&self, corpus: &mut CorpusSpec) {
        for (alt, canonical) in &self.alternatives {
            corpus.add_alt_title(canonical, alt);
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RedirectOutcome {
    pub map: RedirectMap,
    /// Titles dropped because they sit on a redirect cycle.
    pub cycles: BTreeSet<String>,
    pub diagnostics: Vec<String>,
}

/// Maps every redirect that reaches a corpus article within
/// [`MAX_REDIRECT_CHAIN`] hops. Corpus titles are never remapped.
pub fn build_redirect_map<I, A, B>(corpus: &CorpusSpec, edges: I) -> RedirectOutcome
where
    I: IntoIterator<Item = (A, B)>,
    A: AsRef<str>,
    B: AsRef<str>,
{
    let canonical: BTreeSet<String> = corpus.titles().map(str::to_string).collect();
    let edges: HashMap<String, String> = edges
        .into_iter()
        .map(|(a, b)| (normalize_title(a.as_ref()), normalize_title(b.as_ref())))
        .filter(|(a, b)| a != b && !canonical.contains(a))
        .collect();

    let mut outcome = RedirectOutcome::default();
    let mut sources: Vec<&String> = edges.keys().collect();
    sources.sort();
    for source in sources {
        let mut path = vec![source.as_str()];
        let mut current = source.as_str();
        let mut hit = None;
        while let Some(next) = edges.get(current) {
            if canonical.contains(next) {
                hit = (path.len() <= MAX_REDIRECT_CHAIN).then_some(next);
                break;
            }
            if let Some(pos) = path.iter().position(|p| *p == next.as_str()) {
                for member in &path[pos..] {
                    outcome.cycles.insert(member.to_string());
                }
                break;
            }
            path.push(next);
            current = next;
        }
        if let Some(target) = hit {
            outcome.map.alternatives.insert(source.clone(), target.clone());
        }
    }
    if !outcome.cycles.is_empty() {
        outcome.diagnostics.push(format!(
            "dropped {} titles on redirect cycles: {}",
            outcome.cycles.len(),
            outcome.cycles.iter().cloned().collect::<Vec<_>>().join(", ")
        ));
    }
    outcome.map.language = corpus.language.clone();
    outcome.map.canonical = canonical;
    outcome
}

/// Redirect edges from the `page` and `redirect` SQL dumps, restricted to
/// the article namespace.
pub fn read_redirect_dumps<P: BufRead, R: BufRead>(page_dump: P, redirect_dump: R) -> Result<Vec<(String, String)>, IngestError> {
    let mut titles: HashMap<i64, String> = HashMap::new();
    for row in SqlInsertReader::new(page_dump) {
        let row = row?;
        if row.table != "page" {
            continue;
        }
        let v = &row.values;
        if let (Some(id), Some(ARTICLE_NAMESPACE), Some(title)) = (
            v.first().and_then(SqlValue::as_int),
            v.get(1).and_then(SqlValue::as_int),
            v.get(2).and_then(SqlValue::as_str),
        ) {
            titles.insert(id, normalize_title(title));
        }
    }
    let mut edges = Vec::new();
    for row in SqlInsertReader::new(redirect_dump) {
        let row = row?;
        if row.table != "redirect" {
            continue;
        }
        let v = &row.values;
        let (Some(from), Some(ARTICLE_NAMESPACE), Some(target)) = (
            v.first().and_then(SqlValue::as_int),
            v.get(1).and_then(SqlValue::as_int),
            v.get(2).and_then(SqlValue::as_str),
        ) else {
            continue;
        };
        if let Some(source) = titles.get(&from) {
            edges.push((source.clone(), normalize_title(target)));
        }
    }
    Ok(edges)
}

/// Redirect edges from a two-column CSV `from,to` with a header row.
pub fn read_redirect_table<R: Read>(reader: R) -> Result<Vec<(String, String)>, IngestError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut edges = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        if let (Some(a), Some(b)) = (rec.get(0), rec.get(1)) {
            edges.push((normalize_title(a), normalize_title(b)));
        }
    }
    Ok(edges)
}

/// Redirects pointing at the corpus titles, fetched with `prop=redirects`.
/// Redirects of redirects are followed up to the chain limit.
pub fn fetch_api_redirects(
    endpoint_template: &str,
    language: &str,
    titles: &[String],
    fetch: &Arc<dyn Fetch>,
) -> Result<Vec<(String, String)>, IngestError> {
    let mut edges = Vec::new();
    let mut frontier: Vec<String> = titles.to_vec();
    for _ in 0..MAX_REDIRECT_CHAIN {
        let mut next = Vec::new();
        for target in &frontier {
            for source in redirects_to(endpoint_template, language, target, fetch)? {
                edges.push((source.clone(), target.clone()));
                next.push(source);
            }
        }
        if next.is_empty() {
            break;
        }
        frontier = next;
    }
    Ok(edges)
}

fn redirects_to(endpoint_template: &str, language: &str, title: &str, fetch: &Arc<dyn Fetch>) -> Result<Vec<String>, IngestError> {
    let raw = endpoint_template.replace("{lang}", language);
    let base = Url::parse(&raw).map_err(|e| IngestError::Api {
        url: raw.clone(),
        message: e.to_string(),
    })?;
    let mut out = Vec::new();
    let mut cont: Vec<(String, String)> = Vec::new();
    loop {
        let mut url = base.clone();
        {
            let mut q = url.query_pairs_mut();
            q.append_pair("action", "query")
                .append_pair("format", "json")
                .append_pair("formatversion", "2")
                .append_pair("prop", "redirects")
                .append_pair("rdnamespace", "0")
                .append_pair("rdlimit", "max")
                .append_pair("titles", title);
            for (k, v) in &cont {
                q.append_pair(k, v);
            }
        }
        let body = fetch.get_text(url.as_str())?;
        let json: Value = serde_json::from_str(&body).map_err(|e| IngestError::Api {
            url: url.to_string(),
            message: e.to_string(),
        })?;
        if let Some(list) = json.pointer("/query/pages/0/redirects").and_then(Value::as_array) {
            out.extend(
                list.iter()
                    .filter_map(|r| r.get("title").and_then(Value::as_str))
                    .map(normalize_title),
            );
        }
        match json.get("continue").and_then(Value::as_object) {
            Some(c) => {
                cont = c
                    .iter()
                    .map(|(k, v)| (k.clone(), v.as_str().map_or_else(|| v.to_string(), str::to_string)))
                    .collect()
            }
            None => return Ok(out),
        }
    }
}
