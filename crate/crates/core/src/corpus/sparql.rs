//! Semantic-database queries for topic items and their sitelinks.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde_json::Value;
use url::Url;

use super::{CorpusArticle, CorpusSpec, Method};
use crate::http::{Fetch, HttpError};

/// Items that are an instance of "disease outbreak" of COVID-19.
pub const OUTBREAK_QUERY: (&str, &str) = ("Q3241045", "Q84263196");
/// Items that are an instance of "Wikimedia timeline article" of the pandemic.
pub const TIMELINE_QUERY: (&str, &str) = ("Q18340550", "Q81068910");

#[derive(Debug, thiserror::Error)]
pub enum SparqlError {
    #[error(transparent)]
    Http(#[from] HttpError),
    #[error("malformed SPARQL JSON results: {0}")]
    Malformed(String),
}

#[derive(Debug, thiserror::Error)]
pub enum SitelinkError {
    #[error("no items to resolve")]
    NoItems,
    #[error("sitelink resolution failed for {} of {total} items: {source}", failed_items.len())]
    Partial {
        resolved: BTreeMap<String, CorpusSpec>,
        failed_items: Vec<String>,
        total: usize,
        source: SparqlError,
    },
}

/// `?item` instances of `class` qualified with `of` (P642) = `subject`.
fn instance_of_query(class: &str, subject: &str) -> String {
    format!("SELECT ?item WHERE {{\n\t?item p:P31 [ps:P31 wd:{class};\n\tpq:P642 wd:{subject}]. }}\n")
}

pub fn build_outbreak_query() -> String {
    instance_of_query(OUTBREAK_QUERY.0, OUTBREAK_QUERY.1)
}

pub fn build_timeline_query() -> String {
    instance_of_query(TIMELINE_QUERY.0, TIMELINE_QUERY.1)
}

fn site_iri(language: &str) -> String {
    format!("<https://{language}.wikipedia.org/>")
}

/// Article titles of `items` in the Wikipedia editions of `languages`.
pub fn build_sitelinks_query<'a>(
    items: impl IntoIterator<Item = &'a str>,
    languages: impl IntoIterator<Item = &'a str>,
) -> String {
    let items: Vec<String> = items.into_iter().map(|q| format!("wd:{q}")).collect();
    let sites: Vec<String> = languages.into_iter().map(site_iri).collect();
    format!(
        "SELECT ?item ?site ?title WHERE {{\n\
         \tVALUES ?item {{ {} }}\n\
         \tVALUES ?site {{ {} }}\n\
         \t?article schema:about ?item ;\n\
         \t\tschema:isPartOf ?site ;\n\
         \t\tschema:name ?title .\n}}\n",
        items.join(" "),
        sites.join(" ")
    )
}

/// One solution: variable name to bound value.
pub type SparqlRow = BTreeMap<String, String>;

/// Parses the SPARQL 1.1 JSON results format.
pub fn parse_sparql_results(body: &str) -> Result<Vec<SparqlRow>, SparqlError> {
    let v: Value = serde_json::from_str(body).map_err(|e| SparqlError::Malformed(e.to_string()))?;
    let bindings = v
        .pointer("/results/bindings")
        .and_then(Value::as_array)
        .ok_or_else(|| SparqlError::Malformed("missing results.bindings".into()))?;
    bindings
        .iter()
        .map(|b| {
            let obj = b
                .as_object()
                .ok_or_else(|| SparqlError::Malformed("binding is not an object".into()))?;
            obj.iter()
                .map(|(var, cell)| {
                    cell.get("value")
                        .and_then(Value::as_str)
                        .map(|s| (var.clone(), s.to_string()))
                        .ok_or_else(|| SparqlError::Malformed(format!("binding {var} has no value")))
                })
                .collect()
        })
        .collect()
}

/// `Q` identifiers bound to `?item`, from entity IRIs or bare ids.
pub fn item_ids_from_results(rows: &[SparqlRow]) -> BTreeSet<String> {
    rows.iter()
        .filter_map(|r| r.get("item"))
        .filter_map(|iri| iri.rsplit('/').next())
        .filter(|id| id.starts_with('Q') && id.len() > 1)
        .map(str::to_string)
        .collect()
}

pub trait SparqlEndpoint: Send + Sync {
    fn select(&self, query: &str) -> Result<Vec<SparqlRow>, SparqlError>;
}

/// GET-based SPARQL protocol client.
pub struct HttpSparqlEndpoint {
    endpoint: Url,
    fetch: Arc<dyn Fetch>,
}

impl HttpSparqlEndpoint {
    pub fn new(endpoint: Url, fetch: Arc<dyn Fetch>) -> Self {
        HttpSparqlEndpoint { endpoint, fetch }
    }
}

impl SparqlEndpoint for HttpSparqlEndpoint {
    fn select(&self, query: &str) -> Result<Vec<SparqlRow>, SparqlError> {
        let mut url = self.endpoint.clone();
        url.query_pairs_mut().append_pair("query", query).append_pair("format", "json");
        parse_sparql_results(&self.fetch.get_text(url.as_str())?)
    }
}

fn language_of_site(site: &str) -> Option<&str> {
    let host = site.strip_prefix("https://")?.split('/').next()?;
    host.strip_suffix(".wikipedia.org")
}

/// Looks up the article title of each item in each requested language.
/// Items are queried in batches of `batch_size`; a failing batch does not
/// stop the others, but the result is then a partial-results error.
pub fn resolve_sitelinks(
    items: &BTreeSet<String>,
    languages: &BTreeSet<String>,
    endpoint: &dyn SparqlEndpoint,
    batch_size: usize,
) -> Result<BTreeMap<String, CorpusSpec>, SitelinkError> {
    if items.is_empty() {
        return Err(SitelinkError::NoItems);
    }
    let mut specs: BTreeMap<String, CorpusSpec> =
        languages.iter().map(|l| (l.clone(), CorpusSpec::new(l.clone()))).collect();
    let items: Vec<&str> = items.iter().map(String::as_str).collect();
    let mut failed = Vec::new();
    let mut first_error = None;
    for batch in items.chunks(batch_size.max(1)) {
        let query = build_sitelinks_query(batch.iter().copied(), languages.iter().map(String::as_str));
        match endpoint.select(&query) {
            Ok(rows) => {
                for row in rows {
                    let (Some(site), Some(title)) = (row.get("site"), row.get("title")) else {
                        continue;
                    };
                    let Some(spec) = language_of_site(site).and_then(|l| specs.get_mut(l)) else {
                        continue;
                    };
                    spec.insert(CorpusArticle::new(title, Method::Wikidata));
                }
            }
            Err(e) => {
                failed.extend(batch.iter().map(|s| s.to_string()));
                first_error.get_or_insert(e);
            }
        }
    }
    match first_error {
        None => Ok(specs),
        Some(source) => Err(SitelinkError::Partial {
            resolved: specs,
            failed_items: failed,
            total: items.len(),
            source,
        }),
    }
}
