//! Daily page views per canonical article.
//!
//! Three inputs are supported: hourly pageview dump files (all agents),
//! the per-article REST API (all agents and users), and a pre-aggregated
//! daily CSV table. Views of alternative titles are folded into their
//! canonical article; everything outside the corpus is dropped while
//! streaming.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;
use std::sync::Arc;

use chrono::NaiveDate;
use flate2::read::MultiGzDecoder;
use percent_encoding::{percent_decode_str, utf8_percent_encode, AsciiSet, NON_ALPHANUMERIC};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::redirects::RedirectMap;
use super::{IngestError, PageViewRecord, ViewMode};
use crate::cache::{CacheError, DiskCache};
use crate::calendar::DateWindow;
use crate::http::Fetch;
use crate::title::normalize_title;

pub const DEFAULT_PAGEVIEW_API: &str = "https://wikimedia.org/api/rest_v1/metrics/pageviews";

const TITLE_SEGMENT: &AsciiSet = &NON_ALPHANUMERIC.remove(b'_').remove(b'-').remove(b'.').remove(b'~');

/// One parsed hourly line: `project page_title count bytes`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HourlyLine<'a> {
    pub project: &'a str,
    pub title: &'a str,
    pub count: u64,
}

/// Parses one dump line; None if it does not have the expected shape.
pub fn parse_hourly_line(line: &str) -> Option<HourlyLine<'_>> {
    let mut fields = line.split(' ');
    let project = fields.next().filter(|p| !p.is_empty())?;
    let title = fields.next().filter(|t| !t.is_empty())?;
    let count = fields.next()?.trim().parse().ok()?;
    Some(HourlyLine { project, title, count })
}

/// Date encoded in a dump file name such as `pageviews-20200301-130000.gz`.
pub fn day_from_dump_filename(path: &Path) -> Option<NaiveDate> {
    let name = path.file_name()?.to_str()?;
    name.split(['-', '.'])
        .find(|part| part.len() == 8 && part.bytes().all(|b| b.is_ascii_digit()))
        .and_then(|d| NaiveDate::parse_from_str(d, "%Y%m%d").ok())
}

/// Counters kept while ingesting.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageViewTally {
    pub lines: u64,
    pub malformed: u64,
    pub matched_lines: u64,
    /// Raw all-agent views of matched lines; equals the ingested total.
    pub matched_views: u64,
    /// Records whose human count exceeded the all-agent count.
    pub clamped: u64,
}

/// Per-(article, day) sums; memory is bounded by corpus size times days.
#[derive(Debug, Clone, Default)]
pub struct ViewAccumulator {
    sums: HashMap<(String, NaiveDate), (u64, u64)>,
}

impl ViewAccumulator {
    pub fn add(&mut self, canonical: &str, day: NaiveDate, all: u64, human: u64) {
        let e = self.sums.entry((canonical.to_string(), day)).or_insert((0, 0));
        e.0 += all;
        e.1 += human;
    }

    /// One record per canonical title and window day, zero-filled, sorted
    /// by title then date.
    pub fn into_records(
        self,
        language: &str,
        redirects: &RedirectMap,
        window: &DateWindow,
        mode: ViewMode,
        tally: &mut PageViewTally,
    ) -> Vec<PageViewRecord> {
        let mut out = Vec::new();
        for title in redirects.canonical_titles() {
            for day in window.days() {
                let (all, mut human) = self.sums.get(&(title.to_string(), day)).copied().unwrap_or((0, 0));
                if human > all {
                    tally.clamped += 1;
                    human = all;
                }
                out.push(PageViewRecord {
                    language: language.to_string(),
                    title: title.to_string(),
                    date: day,
                    views_all: all,
                    views_human: human,
                    mode,
                });
            }
        }
        out
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageViewIngest {
    pub records: Vec<PageViewRecord>,
    pub tally: PageViewTally,
}

fn project_matches(project: &str, language: &str) -> bool {
    project
        .strip_prefix(language)
        .is_some_and(|rest| rest.is_empty() || rest == ".m")
}

/// Streams one hourly dump for `day` into the accumulator.
pub fn ingest_hourly_dump<R: BufRead>(
    reader: R,
    day: NaiveDate,
    language: &str,
    redirects: &RedirectMap,
    acc: &mut ViewAccumulator,
    tally: &mut PageViewTally,
) -> Result<(), IngestError> {
    for line in reader.split(b'\n') {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        tally.lines += 1;
        let line = String::from_utf8_lossy(&line);
        let Some(parsed) = parse_hourly_line(line.trim_end_matches('\r')) else {
            tally.malformed += 1;
            continue;
        };
        if !project_matches(parsed.project, language) {
            continue;
        }
        let decoded = percent_decode_str(parsed.title).decode_utf8_lossy();
        let Some(canonical) = redirects.resolve_normalized(&normalize_title(&decoded)) else {
            continue;
        };
        tally.matched_lines += 1;
        tally.matched_views += parsed.count;
        acc.add(canonical, day, parsed.count, parsed.count);
    }
    Ok(())
}

/// Opens a file, decompressing `.gz` transparently.
pub fn open_input(path: &Path) -> Result<Box<dyn BufRead>, IngestError> {
    let file = File::open(path)?;
    Ok(if path.extension().is_some_and(|e| e == "gz") {
        Box::new(BufReader::new(MultiGzDecoder::new(file)))
    } else {
        Box::new(BufReader::new(file))
    })
}

/// Ingests hourly dump files. Files whose name carries no date, or a date
/// outside the window, are skipped. Human views equal all views.
pub fn ingest_pageview_dumps(
    paths: &[impl AsRef<Path>],
    language: &str,
    redirects: &RedirectMap,
    window: &DateWindow,
) -> Result<PageViewIngest, IngestError> {
    let mut acc = ViewAccumulator::default();
    let mut tally = PageViewTally::default();
    for path in paths {
        let path = path.as_ref();
        let Some(day) = day_from_dump_filename(path).filter(|d| window.contains(*d)) else {
            tracing::debug!(path = %path.display(), "skipping pageview file outside the window");
            continue;
        };
        ingest_hourly_dump(open_input(path)?, day, language, redirects, &mut acc, &mut tally)?;
    }
    let records = acc.into_records(language, redirects, window, ViewMode::Dump, &mut tally);
    Ok(PageViewIngest { records, tally })
}

/// Ingests a daily CSV with header `date,title,views_all,views_human`.
/// Rows with human views above all views are malformed.
pub fn ingest_pageview_table<R: Read>(
    reader: R,
    language: &str,
    redirects: &RedirectMap,
    window: &DateWindow,
) -> Result<PageViewIngest, IngestError> {
    let mut acc = ViewAccumulator::default();
    let mut tally = PageViewTally::default();
    let mut rdr = csv::Reader::from_reader(reader);
    for rec in rdr.records() {
        let rec = rec?;
        tally.lines += 1;
        let parsed = (|| {
            let date = NaiveDate::parse_from_str(rec.get(0)?.trim(), "%Y-%m-%d").ok()?;
            let title = normalize_title(rec.get(1)?);
            let all: u64 = rec.get(2)?.trim().parse().ok()?;
            let human: u64 = rec.get(3)?.trim().parse().ok()?;
            (human <= all).then_some((date, title, all, human))
        })();
        let Some((date, title, all, human)) = parsed else {
            tally.malformed += 1;
            continue;
        };
        if !window.contains(date) {
            continue;
        }
        let Some(canonical) = redirects.resolve_normalized(&title) else {
            continue;
        };
        tally.matched_lines += 1;
        tally.matched_views += all;
        acc.add(canonical, date, all, human);
    }
    let records = acc.into_records(language, redirects, window, ViewMode::Table, &mut tally);
    Ok(PageViewIngest { records, tally })
}

/// Client for the per-article daily pageview REST endpoint.
pub struct ApiPageViews {
    base: String,
    fetch: Arc<dyn Fetch>,
    cache: Option<DiskCache>,
}

impl ApiPageViews {
    pub fn new(base: impl Into<String>, fetch: Arc<dyn Fetch>) -> Self {
        ApiPageViews {
            base: base.into().trim_end_matches('/').to_string(),
            fetch,
            cache: None,
        }
    }

    pub fn with_cache(mut self, cache: DiskCache) -> Self {
        self.cache = Some(cache);
        self
    }

    fn url(&self, language: &str, agent: &str, title: &str, window: &DateWindow) -> String {
        let segment = utf8_percent_encode(&title.replace(' ', "_"), TITLE_SEGMENT).to_string();
        format!(
            "{}/per-article/{language}.wikipedia/all-access/{agent}/{segment}/daily/{}00/{}00",
            self.base,
            window.start.format("%Y%m%d"),
            window.end.format("%Y%m%d"),
        )
    }

    /// Daily series for one title and agent class; a 404 means no views.
    fn series(
        &self,
        language: &str,
        agent: &str,
        title: &str,
        window: &DateWindow,
    ) -> Result<BTreeMap<NaiveDate, u64>, IngestError> {
        let url = self.url(language, agent, title, window);
        let fetch = || -> Result<BTreeMap<NaiveDate, u64>, IngestError> {
            let body = match self.fetch.get_text(&url) {
                Ok(b) => b,
                Err(e) if e.is_not_found() => return Ok(BTreeMap::new()),
                Err(e) => return Err(e.into()),
            };
            parse_daily_series(&url, &body)
        };
        match &self.cache {
            Some(cache) => cache.get_or_fetch("pageviews", &url, fetch).map_err(|e| match e {
                CacheError::OfflineMiss { key, .. } => IngestError::OfflineMiss(key),
                CacheError::Io(e) => IngestError::Io(e),
                CacheError::Fetch(e) => e,
            }),
            None => fetch(),
        }
    }

    /// Records for every canonical article, summing over all its titles.
    /// Days missing from a response count as zero.
    pub fn ingest(&self, language: &str, redirects: &RedirectMap, window: &DateWindow) -> Result<PageViewIngest, IngestError> {
        let mut acc = ViewAccumulator::default();
        let mut tally = PageViewTally::default();
        for canonical in redirects.canonical_titles() {
            for title in redirects.titles_of(canonical) {
                let all = self.series(language, "all-agents", &title, window)?;
                let human = self.series(language, "user", &title, window)?;
                for day in window.days() {
                    let a = all.get(&day).copied().unwrap_or(0);
                    let h = human.get(&day).copied().unwrap_or(0);
                    if a > 0 || h > 0 {
                        tally.lines += 1;
                        tally.matched_lines += 1;
                        tally.matched_views += a;
                        acc.add(canonical, day, a, h);
                    }
                }
            }
        }
        let records = acc.into_records(language, redirects, window, ViewMode::Api, &mut tally);
        Ok(PageViewIngest { records, tally })
    }
}

fn parse_daily_series(url: &str, body: &str) -> Result<BTreeMap<NaiveDate, u64>, IngestError> {
    let err = |message: String| IngestError::Api {
        url: url.to_string(),
        message,
    };
    let json: Value = serde_json::from_str(body).map_err(|e| err(e.to_string()))?;
    let items = json
        .get("items")
        .and_then(Value::as_array)
        .ok_or_else(|| err("missing items".into()))?;
    let mut out = BTreeMap::new();
    for item in items {
        let ts = item.get("timestamp").and_then(Value::as_str).unwrap_or_default();
        let day = ts
            .get(..8)
            .and_then(|d| NaiveDate::parse_from_str(d, "%Y%m%d").ok())
            .ok_or_else(|| err(format!("bad timestamp {ts:?}")))?;
        let views = item
            .get("views")
            .and_then(Value::as_u64)
            .ok_or_else(|| err("missing views".into()))?;
        *out.entry(day).or_insert(0) += views;
    }
    Ok(out)
}
