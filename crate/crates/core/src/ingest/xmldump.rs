//! Streaming reader for MediaWiki XML history dumps.
//!
//! One pass collects the wanted articles' revisions (window-selected), the
//! full history of every template page up to the window end, template
//! redirects as aliases, and article redirects.

use std::collections::{BTreeMap, HashSet};
use std::io::BufRead;

use chrono::{DateTime, Utc};
use quick_xml::escape::resolve_predefined_entity;
use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;
use regex::Regex;
use serde::{Deserialize, Serialize};
use std::sync::LazyLock;

use super::revisions::{select_window, ArticleRef, RevisionFetch, RevisionSource};
use super::IngestError;
use crate::calendar::DateWindow;
use crate::title::normalize_title;
use crate::wikitext::{RevisionText, TemplateStore, TemplateStoreBuilder, TemplateStoreError};

const TEMPLATE_NAMESPACE: i64 = 10;

static REDIRECT_TEXT: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)^\s*#redirect\s*:?\s*\[\[([^\]|#]+)").expect("valid"));

/// Everything the pipeline needs from one language's history dump.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct HistoryDump {
    pub language: String,
    /// Canonical title to window-selected revisions, ascending.
    pub articles: BTreeMap<String, Vec<RevisionText>>,
    /// Template name (without namespace) to `(timestamp, text)` history.
    pub templates: BTreeMap<String, Vec<(DateTime<Utc>, String)>>,
    /// Template alias to target template name.
    pub template_aliases: BTreeMap<String, String>,
    /// Article-namespace redirects: source title to target title.
    pub redirects: BTreeMap<String, String>,
}

impl HistoryDump {
    /// Template store with `verbatim` templates excluded from expansion.
    pub fn template_store<'a>(
        &self,
        verbatim: impl IntoIterator<Item = &'a str>,
    ) -> Result<TemplateStore, TemplateStoreError> {
        let mut b = TemplateStoreBuilder::new();
        for (name, revs) in &self.templates {
            for (ts, text) in revs {
                b.add_revision(name, *ts, text.clone());
            }
        }
        for (alias, target) in &self.template_aliases {
            b.add_alias(alias, target);
        }
        for name in verbatim {
            b.add_verbatim(name);
        }
        b.build()
    }

    /// Latest revision text of an article, if present.
    pub fn latest_text(&self, title: &str) -> Option<&str> {
        self.articles
            .get(&normalize_title(title))
            .and_then(|revs| revs.last())
            .map(|r| r.wikitext.as_str())
    }
}

/// Drops a namespace prefix (`Template:`, `Szablon:`, ...).
fn strip_namespace(title: &str) -> &str {
    title.split_once(':').map_or(title, |(_, rest)| rest)
}

#[derive(Default)]
struct PageState {
    title: String,
    ns: Option<i64>,
    redirect: Option<String>,
    revisions: Vec<(DateTime<Utc>, String)>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Field {
    None,
    Title,
    Ns,
    Timestamp,
    Text,
}

fn xml_err(e: impl std::fmt::Display, pos: u64) -> IngestError {
    IngestError::Xml(format!("{e} at byte {pos}"))
}

fn redirect_target(e: &BytesStart<'_>) -> Option<String> {
    e.try_get_attribute("title")
        .ok()
        .flatten()
        .and_then(|a| a.unescape_value().ok().map(|v| v.into_owned()))
}

/// Reads a `pages-meta-history` XML dump.
///
/// `wanted` limits which articles are kept (None keeps every non-redirect
/// article). With a window, article revisions are narrowed by
/// [`select_window`] and template revisions after the window end are
/// skipped.
pub fn read_history_dump<R: BufRead>(
    reader: R,
    language: &str,
    wanted: Option<&HashSet<String>>,
    window: Option<&DateWindow>,
) -> Result<HistoryDump, IngestError> {
    let mut xml = Reader::from_reader(reader);
    let mut buf = Vec::new();
    let mut dump = HistoryDump {
        language: language.to_string(),
        ..HistoryDump::default()
    };
    let mut page: Option<PageState> = None;
    let mut in_revision = false;
    let mut field = Field::None;
    let mut text = String::new();
    let mut rev_ts: Option<DateTime<Utc>> = None;
    let mut rev_text: Option<String> = None;
    let window_end = window.map(DateWindow::end_instant);

    let keep_page = |p: &PageState| -> bool {
        match p.ns {
            Some(0) => p.redirect.is_none() && wanted.is_none_or(|w| w.contains(&p.title)),
            Some(TEMPLATE_NAMESPACE) => true,
            _ => false,
        }
    };

    loop {
        let pos = xml.buffer_position();
        let event = xml.read_event_into(&mut buf).map_err(|e| xml_err(e, pos))?;
        match event {
            Event::Start(e) => {
                let name = e.local_name();
                match name.as_ref() {
                    b"page" => page = Some(PageState::default()),
                    b"revision" => {
                        in_revision = true;
                        rev_ts = None;
                        rev_text = None;
                    }
                    b"title" if page.is_some() && !in_revision => field = Field::Title,
                    b"ns" if page.is_some() && !in_revision => field = Field::Ns,
                    b"timestamp" if in_revision => field = Field::Timestamp,
                    b"text" if in_revision => field = Field::Text,
                    b"redirect" => {
                        if let Some(p) = page.as_mut() {
                            p.redirect = redirect_target(&e);
                        }
                    }
                    _ => {}
                }
                text.clear();
            }
            Event::Empty(e) => match e.local_name().as_ref() {
                b"redirect" => {
                    if let Some(p) = page.as_mut() {
                        p.redirect = redirect_target(&e);
                    }
                }
                b"text" if in_revision => rev_text = Some(String::new()),
                _ => {}
            },
            Event::Text(t) if field != Field::None => {
                let keep = field != Field::Text || page.as_ref().is_some_and(keep_page);
                if keep {
                    text.push_str(&t.xml10_content().map_err(|e| xml_err(e, pos))?);
                }
            }
            Event::CData(t) if field != Field::None => {
                text.push_str(&t.decode().map_err(|e| xml_err(e, pos))?);
            }
            Event::GeneralRef(r) if field != Field::None => {
                if let Some(ch) = r.resolve_char_ref().map_err(|e| xml_err(e, pos))? {
                    text.push(ch);
                } else {
                    let name = r.decode().map_err(|e| xml_err(e, pos))?;
                    match resolve_predefined_entity(&name) {
                        Some(v) => text.push_str(v),
                        None => return Err(xml_err(format!("unknown entity &{name};"), pos)),
                    }
                }
            }
            Event::End(e) => {
                match e.local_name().as_ref() {
                    b"title" if field == Field::Title => {
                        if let Some(p) = page.as_mut() {
                            p.title = normalize_title(&text);
                        }
                    }
                    b"ns" if field == Field::Ns => {
                        if let Some(p) = page.as_mut() {
                            p.ns = text.trim().parse().ok();
                        }
                    }
                    b"timestamp" if field == Field::Timestamp => {
                        rev_ts = Some(
                            DateTime::parse_from_rfc3339(text.trim())
                                .map_err(|e| xml_err(format!("bad timestamp {text:?}: {e}"), pos))?
                                .with_timezone(&Utc),
                        );
                    }
                    b"text" if field == Field::Text => rev_text = Some(std::mem::take(&mut text)),
                    b"revision" => {
                        in_revision = false;
                        if let (Some(p), Some(ts)) = (page.as_mut(), rev_ts) {
                            let in_range = window_end.is_none_or(|end| ts <= end);
                            if keep_page(p) && (p.ns == Some(0) || in_range) {
                                p.revisions.push((ts, rev_text.take().unwrap_or_default()));
                            }
                        }
                    }
                    b"page" => {
                        if let Some(p) = page.take() {
                            finish_page(&mut dump, p, language, window);
                        }
                    }
                    _ => {}
                }
                field = Field::None;
                text.clear();
            }
            Event::Eof => break,
            _ => {}
        }
        buf.clear();
    }
    if page.is_some() {
        return Err(IngestError::Xml("dump ends inside a <page> element".into()));
    }
    Ok(dump)
}

fn finish_page(dump: &mut HistoryDump, mut p: PageState, language: &str, window: Option<&DateWindow>) {
    match p.ns {
        Some(0) => match p.redirect {
            Some(target) => {
                dump.redirects.insert(p.title, normalize_title(&target));
            }
            None => {
                if p.revisions.is_empty() {
                    return;
                }
                let revs: Vec<RevisionText> = p
                    .revisions
                    .into_iter()
                    .map(|(ts, text)| RevisionText::new(p.title.clone(), language, ts, text))
                    .collect();
                let revs = match window {
                    Some(w) => select_window(revs, w),
                    None => {
                        let mut revs = revs;
                        revs.sort_by_key(|r| r.timestamp);
                        revs
                    }
                };
                dump.articles.insert(p.title, revs);
            }
        },
        Some(TEMPLATE_NAMESPACE) => {
            let name = normalize_title(strip_namespace(&p.title));
            p.revisions.sort_by_key(|(ts, _)| *ts);
            let target = p.redirect.clone().or_else(|| {
                p.revisions
                    .last()
                    .and_then(|(_, text)| REDIRECT_TEXT.captures(text))
                    .map(|c| c[1].to_string())
            });
            match target {
                Some(target) => {
                    dump.template_aliases.insert(name, normalize_title(strip_namespace(&target)));
                }
                None if !p.revisions.is_empty() => {
                    dump.templates.insert(name, p.revisions);
                }
                None => {}
            }
        }
        _ => {}
    }
}

/// Serves revisions from a dump read into memory.
pub struct DumpRevisionSource {
    dumps: BTreeMap<String, HistoryDump>,
}

impl DumpRevisionSource {
    pub fn new(dumps: impl IntoIterator<Item = HistoryDump>) -> Self {
        DumpRevisionSource {
            dumps: dumps.into_iter().map(|d| (d.language.clone(), d)).collect(),
        }
    }

    pub fn dump(&self, language: &str) -> Option<&HistoryDump> {
        self.dumps.get(language)
    }
}

impl RevisionSource for DumpRevisionSource {
    fn fetch_revisions(&self, article: &ArticleRef, window: &DateWindow) -> Result<RevisionFetch, IngestError> {
        let revs = self
            .dumps
            .get(&article.language)
            .and_then(|d| d.articles.get(&normalize_title(&article.title)));
        Ok(match revs {
            Some(revs) => RevisionFetch {
                revisions: select_window(revs.clone(), window),
                missing: false,
                diagnostics: Vec::new(),
            },
            None => RevisionFetch {
                revisions: Vec::new(),
                missing: true,
                diagnostics: vec![format!("{}:{} not found in dump", article.language, article.title)],
            },
        })
    }
}
