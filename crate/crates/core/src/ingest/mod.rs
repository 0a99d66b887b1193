//! Acquisition of revision histories, redirects and daily page views, and
//! their fold into per-article daily snapshots.

mod pageviews;
mod redirects;
mod revisions;
mod snapshot;
mod xmldump;

use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::domain::SourceDomain;

pub use pageviews::{
    day_from_dump_filename, ingest_hourly_dump, open_input, ingest_pageview_dumps, ingest_pageview_table, parse_hourly_line,
    ApiPageViews, HourlyLine, PageViewIngest, PageViewTally, ViewAccumulator, DEFAULT_PAGEVIEW_API,
};
pub use redirects::{
    build_redirect_map, fetch_api_redirects, read_redirect_dumps, read_redirect_table, RedirectMap, RedirectOutcome,
    MAX_REDIRECT_CHAIN,
};
pub use revisions::{
    revision_of_day, select_window, ApiRevisionSource, ArticleRef, CachedRevisionSource, RevisionFetch,
    RevisionSource,
};
pub use snapshot::{build_snapshots, count_references, RevisionRefs};
pub use xmldump::{read_history_dump, DumpRevisionSource, HistoryDump};

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed XML dump: {0}")]
    Xml(String),
    #[error(transparent)]
    Http(#[from] crate::http::HttpError),
    #[error("malformed API response from {url}: {message}")]
    Api { url: String, message: String },
    #[error(transparent)]
    Sql(#[from] crate::corpus::sqldump::SqlDumpError),
    #[error("malformed CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("cache miss for {0} in offline mode")]
    OfflineMiss(String),
}

/// Where a page-view count came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ViewMode {
    /// Hourly dumps: all agents only, so human views mirror all views.
    #[default]
    Dump,
    /// Per-article API with the user-agent split.
    Api,
    /// Pre-aggregated daily table with both counts.
    Table,
}

/// Daily views of one canonical article.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageViewRecord {
    pub language: String,
    pub title: String,
    pub date: NaiveDate,
    pub views_all: u64,
    pub views_human: u64,
    pub mode: ViewMode,
}

/// Per-article per-day inputs of the scoring models.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArticleDaySnapshot {
    pub article_id: String,
    pub date: NaiveDate,
    /// C(i): every reference occurrence, resolvable or not.
    pub total_refs: u64,
    /// C_s(i) for each resolved domain.
    pub domain_counts: BTreeMap<SourceDomain, u64>,
    pub views_all: u64,
    pub views_human: u64,
}
