//! Topic corpus identification.
//!
//! Three independent methods feed one [`CorpusSpec`] per language: the
//! category graph from SQL dumps, semantic-database queries resolved to
//! sitelinks, and an infobox filter over article text. Their outputs are
//! merged by union, keeping track of which method selected each article.

mod category;
mod infobox;
mod sparql;
pub mod sqldump;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::title::normalize_title;

pub use category::{
    load_category_graph, traverse_categories, CategoryError, CategoryGraph, PageInfo, ARTICLE_NAMESPACE,
    CATEGORY_NAMESPACE,
};
pub use infobox::{filter_by_infobox, InfoboxCriteria, InfoboxFilterOutcome};
pub use sparql::{
    build_outbreak_query, build_sitelinks_query, build_timeline_query, item_ids_from_results,
    parse_sparql_results, resolve_sitelinks, HttpSparqlEndpoint, SitelinkError, SparqlEndpoint, SparqlError,
    SparqlRow, OUTBREAK_QUERY, TIMELINE_QUERY,
};

/// How an article entered the corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Categories,
    Wikidata,
    Infobox,
    Manual,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Categories => "categories",
            Method::Wikidata => "wikidata",
            Method::Infobox => "infobox",
            Method::Manual => "manual",
        })
    }
}

impl FromStr for Method {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "categories" => Ok(Method::Categories),
            "wikidata" => Ok(Method::Wikidata),
            "infobox" => Ok(Method::Infobox),
            "manual" => Ok(Method::Manual),
            _ => Err(CorpusError::UnknownMethod(s.to_string())),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("unknown identification method {0:?}")]
    UnknownMethod(String),
    #[error("cannot merge corpus for {left:?} with corpus for {right:?}")]
    LanguageMismatch { left: String, right: String },
    #[error("alternative title {alt:?} of {article:?} is the canonical title of another article")]
    AltTitleClash { alt: String, article: String },
    #[error("alternative title {alt:?} is claimed by both {first:?} and {second:?}")]
    AltTitleShared { alt: String, first: String, second: String },
    #[error("I/O error on corpus file: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed corpus JSON: {0}")]
    Json(#[from] serde_json::Error),
}

/// One topic article. The canonical title is its identifier.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusArticle {
    pub title: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub page_id: Option<u64>,
    #[serde(default)]
    pub alt_titles: BTreeSet<String>,
    pub provenance: BTreeSet<Method>,
}

impl CorpusArticle {
    pub fn new(title: &str, method: Method) -> Self {
        CorpusArticle {
            title: normalize_title(title),
            page_id: None,
            alt_titles: BTreeSet::new(),
            provenance: BTreeSet::from([method]),
        }
    }
}

/// The identified article set of one language edition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub language: String,
    articles: BTreeMap<String, CorpusArticle>,
}

impl CorpusSpec {
    pub fn new(language: impl Into<String>) -> Self {
        CorpusSpec {
            language: language.into(),
            articles: BTreeMap::new(),
        }
    }

    /// Builds a spec from titles selected by one method.
    pub fn from_titles<I, S>(language: impl Into<String>, titles: I, method: Method) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut spec = CorpusSpec::new(language);
        for t in titles {
            spec.insert(CorpusArticle::new(t.as_ref(), method));
        }
        spec
    }

    pub fn len(&self) -> usize {
        self.articles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.articles.is_empty()
    }

    pub fn get(&self, title: &str) -> Option<&CorpusArticle> {
        self.articles.get(&normalize_title(title))
    }

    pub fn contains(&self, title: &str) -> bool {
        self.get(title).is_some()
    }

    /// Articles in title order.
    pub fn articles(&self) -> impl Iterator<Item = &CorpusArticle> {
        self.articles.values()
    }

    pub fn titles(&self) -> impl Iterator<Item = &str> {
        self.articles.keys().map(String::as_str)
    }

    /// Adds an article, merging provenance, alternative titles and page id
    /// with any existing entry of the same title.
    pub fn insert(&mut self, article: CorpusArticle) {
        match self.articles.get_mut(&article.title) {
            Some(existing) => {
                existing.provenance.extend(article.provenance);
                existing.alt_titles.extend(article.alt_titles);
                if existing.page_id.is_none() {
                    existing.page_id = article.page_id;
                }
            }
            None => {
                self.articles.insert(article.title.clone(), article);
            }
        }
    }

    /// Keeps only the articles for which `keep` returns true.
    pub fn retain(&mut self, mut keep: impl FnMut(&CorpusArticle) -> bool) {
        self.articles.retain(|_, a| keep(a));
    }

    /// Records `alt` as an alternative title of `canonical`. Returns false
    /// if `canonical` is not in the corpus.
    pub fn add_alt_title(&mut self, canonical: &str, alt: &str) -> bool {
        let alt = normalize_title(alt);
        match self.articles.get_mut(&normalize_title(canonical)) {
            Some(a) if a.title != alt => {
                a.alt_titles.insert(alt);
                true
            }
            Some(_) => true,
            None => false,
        }
    }

    /// Set union with per-article provenance merge.
    pub fn union(&mut self, other: CorpusSpec) -> Result<(), CorpusError> {
        if other.language != self.language {
            return Err(CorpusError::LanguageMismatch {
                left: self.language.clone(),
                right: other.language,
            });
        }
        for article in other.articles.into_values() {
            self.insert(article);
        }
        Ok(())
    }

    /// Checks that no alternative title collides with a canonical title or
    /// is shared by two articles.
    pub fn validate(&self) -> Result<(), CorpusError> {
        let mut owner: BTreeMap<&str, &str> = BTreeMap::new();
        for a in self.articles.values() {
            for alt in &a.alt_titles {
                if self.articles.contains_key(alt) {
                    return Err(CorpusError::AltTitleClash {
                        alt: alt.clone(),
                        article: a.title.clone(),
                    });
                }
                if let Some(first) = owner.insert(alt, &a.title) {
                    return Err(CorpusError::AltTitleShared {
                        alt: alt.clone(),
                        first: first.to_string(),
                        second: a.title.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Number of articles selected by each method.
    pub fn method_counts(&self) -> BTreeMap<Method, usize> {
        let mut counts = BTreeMap::new();
        for a in self.articles.values() {
            for m in &a.provenance {
                *counts.entry(*m).or_insert(0) += 1;
            }
        }
        counts
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("corpus serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, CorpusError> {
        let mut spec: CorpusSpec = serde_json::from_str(text)?;
        // Re-key so hand-edited files with unnormalized titles still work.
        let articles = std::mem::take(&mut spec.articles);
        for (_, mut a) in articles {
            a.title = normalize_title(&a.title);
            spec.insert(a);
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        CorpusSpec::from_json(&std::fs::read_to_string(path)?)
    }
}
