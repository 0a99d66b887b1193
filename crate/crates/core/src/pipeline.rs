//! End-to-end orchestration with resumable on-disk artifacts.
//!
//! Layout under the output directory:
//!
//! - `artifacts/{lang}/corpus.json` and `identify.json` (identify)
//! - `artifacts/{lang}/redirects.json`, `templates.json`, `revisions.json`
//!   and `revisions/` (fetch)
//! - `artifacts/{lang}/refs.json` (extract)
//! - `artifacts/{lang}/pageviews.json` (views)
//! - `artifacts/{lang}/snapshots.json` (snapshot)
//! - `artifacts/{lang}/scores.json` and `artifacts/all/scores.json` (score)
//! - `reports/{scope}/{model}/` (report)
//! - `manifest.json`
//!
//! A stage is skipped for a language whose artifact already exists, unless
//! forced. Recomputing a stage removes the artifacts that depend on it.
//! Artifacts from a run with different scoring-relevant settings are
//! discarded at start.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Arc, LazyLock};
use std::time::Instant;

use chrono::{DateTime, NaiveDate, Utc};
use rayon::prelude::*;
use regex::Regex;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tracing::{info, warn};

use crate::cache::{CacheError, DiskCache};
use crate::calendar::{end_of_day, DateWindow};
use crate::config::{ConfigError, PageViewMode, PipelineConfig, RedirectMode, RevisionMode};
use crate::corpus::{
    build_outbreak_query, build_timeline_query, filter_by_infobox, item_ids_from_results, load_category_graph,
    resolve_sitelinks, traverse_categories, CategoryError, CorpusArticle, CorpusError, CorpusSpec, HttpSparqlEndpoint,
    Method, SitelinkError, SparqlEndpoint, SparqlError, SparqlRow,
};
use crate::domain::{parse_psl_sections, DomainError, PslRuleSet};
use crate::http::{Fetch, HttpClient, HttpError, OfflineFetch};
use crate::ingest::{
    build_redirect_map, build_snapshots, count_references, fetch_api_redirects, ingest_pageview_dumps,
    ingest_pageview_table, open_input, read_history_dump, read_redirect_dumps, read_redirect_table, ApiPageViews,
    ApiRevisionSource, ArticleDaySnapshot, ArticleRef, CachedRevisionSource, IngestError, PageViewIngest,
    PageViewRecord, RedirectOutcome, RevisionFetch, RevisionRefs, RevisionSource,
};
use crate::report::{emit_language_heatmap, emit_rank_timeline, ReportError};
use crate::score::{build_series, ModelId, ScoreSeries};
use crate::title::{normalize_template_name, normalize_title};
use crate::wikitext::{
    expand_transclusions, extract_all, strip_comments, template_instances, DiagnosticKind, ExtractConfig,
    NonRefAllowlist, RevisionText, TemplateStore, TemplateStoreBuilder, TemplateStoreError,
    DEFAULT_CITATION_TEMPLATES,
};

pub const MANIFEST: &str = "manifest.json";
/// Scope name of the cross-language artifacts and reports.
pub const ALL_SCOPE: &str = "all";

static REDIRECT_TEXT: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)^\s*#redirect\s*:?\s*\[\[([^\]|#]+)").expect("valid"));

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Identify,
    Fetch,
    Extract,
    Views,
    Snapshot,
    Score,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Identify,
        Stage::Fetch,
        Stage::Extract,
        Stage::Views,
        Stage::Snapshot,
        Stage::Score,
        Stage::Report,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Identify => "identify",
            Stage::Fetch => "fetch",
            Stage::Extract => "extract",
            Stage::Views => "views",
            Stage::Snapshot => "snapshot",
            Stage::Score => "score",
            Stage::Report => "report",
        }
    }

    /// Stages whose artifacts are derived from this one.
    fn dependents(self) -> &'static [Stage] {
        match self {
            Stage::Identify => &[Stage::Fetch, Stage::Extract, Stage::Views, Stage::Snapshot, Stage::Score],
            Stage::Fetch => &[Stage::Extract, Stage::Views, Stage::Snapshot, Stage::Score],
            Stage::Extract | Stage::Views => &[Stage::Snapshot, Stage::Score],
            Stage::Snapshot => &[Stage::Score],
            Stage::Score | Stage::Report => &[],
        }
    }

    /// Per-language files written by the stage; the last one marks completion.
    fn artifacts(self) -> &'static [&'static str] {
        match self {
            Stage::Identify => &["identify.json", "corpus.json"],
            Stage::Fetch => &["redirects.json", "templates.json", "revisions", "revisions.json"],
            Stage::Extract => &["refs.json"],
            Stage::Views => &["pageviews.json"],
            Stage::Snapshot => &["snapshots.json"],
            Stage::Score => &["scores.json"],
            Stage::Report => &[],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown stage {0:?}")]
pub struct UnknownStage(pub String);

impl FromStr for Stage {
    type Err = UnknownStage;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| UnknownStage(s.to_string()))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("I/O error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("malformed artifact {path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("missing artifact {0}; run the earlier stages first")]
    MissingArtifact(PathBuf),
    #[error("language {0:?} is not in the configured languages")]
    UnknownLanguage(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Category(#[from] CategoryError),
    #[error(transparent)]
    Sparql(#[from] SparqlError),
    #[error(transparent)]
    Sitelinks(#[from] SitelinkError),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Template(#[from] TemplateStoreError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error(transparent)]
    Http(#[from] HttpError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Per-invocation choices on top of the configuration.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Recompute stages even when their artifacts exist.
    pub force: bool,
    /// Restrict to these configured languages.
    pub languages: Option<Vec<String>>,
    /// Models to report; all when None.
    pub models: Option<Vec<ModelId>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Completed,
    Skipped,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub status: StageStatus,
    pub started_at: DateTime<Utc>,
    pub duration_ms: u64,
    /// Scopes recomputed by the last run of the stage.
    pub computed: Vec<String>,
    /// Scopes whose artifacts were reused.
    pub skipped: Vec<String>,
    pub diagnostics: BTreeMap<String, u64>,
    pub error: Option<String>,
}

/// Run record written to `<output>/manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    /// Hash of the settings that affect artifacts.
    pub fingerprint: String,
    pub started_at: DateTime<Utc>,
    pub finished_at: Option<DateTime<Utc>>,
    pub languages: Vec<String>,
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub stages: BTreeMap<Stage, StageRecord>,
    pub failed_stage: Option<Stage>,
}

/// Provenance summary of the identify stage.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdentifyReport {
    pub per_method: BTreeMap<Method, usize>,
    pub skipped_roots: Vec<String>,
    pub infobox_dropped: Vec<String>,
    pub infobox_missing_text: Vec<String>,
    pub wikidata_items: usize,
}

/// Template histories and aliases used for date-matched expansion.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateSet {
    pub templates: BTreeMap<String, Vec<(DateTime<Utc>, String)>>,
    pub aliases: BTreeMap<String, String>,
}

impl TemplateSet {
    pub fn store<'a>(&self, verbatim: impl IntoIterator<Item = &'a str>) -> Result<TemplateStore, TemplateStoreError> {
        let mut b = TemplateStoreBuilder::new();
        for (name, revs) in &self.templates {
            for (ts, text) in revs {
                b.add_revision(name, *ts, text.clone());
            }
        }
        for (alias, target) in &self.aliases {
            b.add_alias(alias, target);
        }
        for name in verbatim {
            b.add_verbatim(name);
        }
        b.build()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevisionEntry {
    /// File under `revisions/` holding the [`RevisionFetch`].
    pub file: String,
    pub revisions: usize,
    pub missing: bool,
    pub diagnostics: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevisionIndex {
    pub articles: BTreeMap<String, RevisionEntry>,
}

/// Reference counts of the day-defining revisions of one article.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArticleRefs {
    /// Ascending by timestamp.
    pub revisions: Vec<RevisionRefs>,
    pub diagnostics: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllScores {
    pub languages: Vec<String>,
    pub series: Vec<ScoreSeries>,
}

#[derive(Debug, Default)]
struct StageOutcome {
    computed: Vec<String>,
    skipped: Vec<String>,
    diagnostics: BTreeMap<String, u64>,
}

impl StageOutcome {
    fn add(&mut self, scope: &str, key: &str, value: u64) {
        *self.diagnostics.entry(format!("{scope}.{key}")).or_insert(0) += value;
    }
}

/// Caches SPARQL result sets on disk, keyed by query text.
struct CachedSparql<'a> {
    inner: &'a dyn SparqlEndpoint,
    cache: &'a DiskCache,
}

impl SparqlEndpoint for CachedSparql<'_> {
    fn select(&self, query: &str) -> Result<Vec<SparqlRow>, SparqlError> {
        self.cache
            .get_or_fetch("sparql", query, || self.inner.select(query))
            .map_err(|e| match e {
                CacheError::OfflineMiss { key, .. } => SparqlError::Http(HttpError::Offline(key)),
                CacheError::Io(e) => SparqlError::Malformed(format!("cache: {e}")),
                CacheError::Fetch(e) => e,
            })
    }
}

fn cache_err(e: CacheError<IngestError>) -> IngestError {
    match e {
        CacheError::OfflineMiss { key, .. } => IngestError::OfflineMiss(key),
        CacheError::Io(e) => IngestError::Io(e),
        CacheError::Fetch(e) => e,
    }
}

fn kind_name(kind: DiagnosticKind) -> &'static str {
    match kind {
        DiagnosticKind::DepthExceeded => "depth_exceeded",
        DiagnosticKind::UnclosedRef => "unclosed_ref",
        DiagnosticKind::StrayRefClose => "stray_ref_close",
        DiagnosticKind::UndefinedNamedRef => "undefined_named_ref",
    }
}

/// File name of an article's revision artifact.
fn revision_file(title: &str) -> String {
    let digest = hex::encode(Sha256::digest(title.as_bytes()));
    format!("{}.json", &digest[..16])
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let parent = path.parent().expect("artifact path has a parent");
    fs::create_dir_all(parent).map_err(io_err(parent))?;
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|source| PipelineError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    bytes.push(b'\n');
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    if !path.exists() {
        return Err(PipelineError::MissingArtifact(path.to_path_buf()));
    }
    let bytes = fs::read(path).map_err(io_err(path))?;
    serde_json::from_slice(&bytes).map_err(|source| PipelineError::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn remove_path(path: &Path) -> Result<(), PipelineError> {
    let result = if path.is_dir() {
        fs::remove_dir_all(path)
    } else {
        fs::remove_file(path)
    };
    match result {
        Err(e) if e.kind() != io::ErrorKind::NotFound => Err(io_err(path)(e)),
        _ => Ok(()),
    }
}

/// Regular files named by `paths`, with directories expanded (sorted).
fn expand_files(paths: &[PathBuf]) -> Result<Vec<PathBuf>, PipelineError> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut entries: Vec<PathBuf> = fs::read_dir(p)
                .map_err(io_err(p))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|e| e.is_file())
                .collect();
            entries.sort();
            out.extend(entries);
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}

/// Template names worth fetching: no parser functions or namespaced calls.
fn fetchable_template(name: &str) -> bool {
    !name.is_empty() && !name.starts_with('#') && !name.contains(':')
}

fn template_names(text: &str) -> impl Iterator<Item = String> {
    template_instances(&strip_comments(text))
        .into_iter()
        .map(|t| t.name)
        .filter(|n| fetchable_template(n))
}

/// Extracts, resolves and counts the references of every revision that
/// defines some day of the window. `revisions` must be sorted ascending.
pub fn extract_article(
    revisions: &[RevisionText],
    window: &DateWindow,
    store: &TemplateStore,
    max_depth: usize,
    config: &ExtractConfig,
    allowlist: &NonRefAllowlist,
    rules: &PslRuleSet,
) -> ArticleRefs {
    let mut defining = BTreeSet::new();
    for day in window.days() {
        let cutoff = end_of_day(day);
        let idx = revisions.partition_point(|r| r.timestamp <= cutoff);
        if let Some(i) = idx.checked_sub(1) {
            defining.insert(i);
        }
    }
    let mut out = ArticleRefs::default();
    for i in defining {
        let rev = &revisions[i];
        let expansion = expand_transclusions(rev, store, max_depth);
        let extraction = extract_all(&expansion.text, config, allowlist);
        for d in expansion.diagnostics.iter().chain(&extraction.diagnostics) {
            *out.diagnostics.entry(kind_name(d.kind).to_string()).or_insert(0) += 1;
        }
        let refs = count_references(rev.timestamp, &extraction.occurrences, rules);
        *out.diagnostics.entry("unresolved_urls".to_string()).or_insert(0) += refs.unresolved_urls;
        out.revisions.push(refs);
    }
    out
}

pub struct Pipeline {
    config: PipelineConfig,
    window: DateWindow,
    languages: Vec<String>,
    options: RunOptions,
    fetch: Arc<dyn Fetch>,
    cache: DiskCache,
}

impl Pipeline {
    /// Validates the configuration and sets up the HTTP client (or the
    /// offline stand-in).
    pub fn new(config: PipelineConfig, options: RunOptions) -> Result<Self, PipelineError> {
        let fetch: Arc<dyn Fetch> = if config.offline || config.http.user_agent.trim().is_empty() {
            Arc::new(OfflineFetch)
        } else {
            Arc::new(HttpClient::new(config.http_config())?)
        };
        Pipeline::with_fetch(config, options, fetch)
    }

    /// Like [`new`](Self::new) with a caller-supplied transport.
    pub fn with_fetch(config: PipelineConfig, options: RunOptions, fetch: Arc<dyn Fetch>) -> Result<Self, PipelineError> {
        config.validate()?;
        let window = config.window()?;
        let languages = match &options.languages {
            None => config.languages.clone(),
            Some(subset) => {
                for l in subset {
                    if !config.languages.contains(l) {
                        return Err(PipelineError::UnknownLanguage(l.clone()));
                    }
                }
                config.languages.iter().filter(|l| subset.contains(l)).cloned().collect()
            }
        };
        let cache = DiskCache::new(config.cache_dir.clone(), config.offline);
        Ok(Pipeline {
            config,
            window,
            languages,
            options,
            fetch,
            cache,
        })
    }

    pub fn languages(&self) -> &[String] {
        &self.languages
    }

    pub fn artifact_dir(&self, scope: &str) -> PathBuf {
        self.config.output_dir.join("artifacts").join(scope)
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.config.output_dir.join(MANIFEST)
    }

    fn artifact(&self, lang: &str, name: &str) -> PathBuf {
        self.artifact_dir(lang).join(name)
    }

    fn is_done(&self, stage: Stage, lang: &str) -> bool {
        stage
            .artifacts()
            .last()
            .is_some_and(|marker| self.artifact(lang, marker).exists())
    }

    /// Removes what depends on `stage` for `lang`, including the
    /// cross-language scores.
    fn invalidate_dependents(&self, stage: Stage, lang: &str) -> Result<(), PipelineError> {
        for dep in stage.dependents() {
            for name in dep.artifacts() {
                remove_path(&self.artifact(lang, name))?;
            }
        }
        if stage != Stage::Report {
            remove_path(&self.artifact(ALL_SCOPE, "scores.json"))?;
        }
        Ok(())
    }

    /// Hash of the settings that change artifact contents.
    pub fn fingerprint(&self) -> String {
        let mut value = serde_json::to_value(&self.config).expect("config serializes");
        if let Some(obj) = value.as_object_mut() {
            for key in ["languages", "output_dir", "cache_dir", "offline", "top_k", "http"] {
                obj.remove(key);
            }
        }
        hex::encode(Sha256::digest(value.to_string().as_bytes()))
    }

    fn verbatim_templates(&self, lang: &str) -> Vec<String> {
        let l = self.config.language(lang);
        let mut names: BTreeSet<String> = DEFAULT_CITATION_TEMPLATES
            .iter()
            .map(|t| normalize_template_name(t))
            .chain(l.citation_templates.iter().map(|t| normalize_template_name(t)))
            .chain(l.nonref_sources.iter().map(|(t, _)| normalize_template_name(t)))
            .collect();
        names.retain(|n| !n.is_empty());
        names.into_iter().collect()
    }

    fn load_psl(&self) -> Result<PslRuleSet, PipelineError> {
        let text = fs::read_to_string(&self.config.psl_path).map_err(io_err(&self.config.psl_path))?;
        Ok(parse_psl_sections(&text, self.config.psl_sections)?)
    }

    fn revision_source(&self) -> CachedRevisionSource<ApiRevisionSource> {
        CachedRevisionSource::new(
            ApiRevisionSource::new(self.config.sources.api_endpoint.clone(), self.fetch.clone()),
            self.cache.clone(),
        )
    }

    /// Runs `stages` in pipeline order and records them in the manifest.
    pub fn run(&self, stages: &[Stage]) -> Result<Manifest, PipelineError> {
        let stages: BTreeSet<Stage> = stages.iter().copied().collect();
        let fingerprint = self.fingerprint();
        let previous: Option<Manifest> = read_json(&self.manifest_path()).ok();
        let mut manifest = match previous {
            Some(m) if m.fingerprint == fingerprint => m,
            other => {
                if other.is_some() {
                    warn!("settings changed since the last run; discarding previous artifacts");
                }
                let artifacts = self.config.output_dir.join("artifacts");
                remove_path(&artifacts)?;
                Manifest {
                    version: env!("CARGO_PKG_VERSION").to_string(),
                    fingerprint,
                    started_at: Utc::now(),
                    finished_at: None,
                    languages: Vec::new(),
                    start: self.window.start,
                    end: self.window.end,
                    stages: BTreeMap::new(),
                    failed_stage: None,
                }
            }
        };
        manifest.version = env!("CARGO_PKG_VERSION").to_string();
        manifest.started_at = Utc::now();
        manifest.finished_at = None;
        manifest.languages = self.languages.clone();

        for stage in stages {
            let started_at = Utc::now();
            let clock = Instant::now();
            info!(%stage, "stage started");
            let result = self.run_stage(stage);
            let duration_ms = clock.elapsed().as_millis() as u64;
            match result {
                Ok(outcome) => {
                    let status = if outcome.computed.is_empty() && !outcome.skipped.is_empty() {
                        StageStatus::Skipped
                    } else {
                        StageStatus::Completed
                    };
                    info!(%stage, ?status, duration_ms, "stage finished");
                    manifest.stages.insert(
                        stage,
                        StageRecord {
                            status,
                            started_at,
                            duration_ms,
                            computed: outcome.computed,
                            skipped: outcome.skipped,
                            diagnostics: outcome.diagnostics,
                            error: None,
                        },
                    );
                    if manifest.failed_stage == Some(stage) {
                        manifest.failed_stage = None;
                    }
                    write_json(&self.manifest_path(), &manifest)?;
                }
                Err(e) => {
                    tracing::error!(%stage, error = %e, "stage failed");
                    manifest.stages.insert(
                        stage,
                        StageRecord {
                            status: StageStatus::Failed,
                            started_at,
                            duration_ms,
                            computed: Vec::new(),
                            skipped: Vec::new(),
                            diagnostics: BTreeMap::new(),
                            error: Some(e.to_string()),
                        },
                    );
                    manifest.failed_stage = Some(stage);
                    manifest.finished_at = Some(Utc::now());
                    write_json(&self.manifest_path(), &manifest)?;
                    return Err(e);
                }
            }
        }
        manifest.finished_at = Some(Utc::now());
        write_json(&self.manifest_path(), &manifest)?;
        Ok(manifest)
    }

    fn run_stage(&self, stage: Stage) -> Result<StageOutcome, PipelineError> {
        let mut outcome = StageOutcome::default();
        if stage == Stage::Report {
            self.report(&mut outcome)?;
            return Ok(outcome);
        }
        for lang in &self.languages {
            if !self.options.force && self.is_done(stage, lang) {
                outcome.skipped.push(lang.clone());
                continue;
            }
            match stage {
                Stage::Identify => self.identify(lang, &mut outcome)?,
                Stage::Fetch => self.fetch_revisions(lang, &mut outcome)?,
                Stage::Extract => self.extract(lang, &mut outcome)?,
                Stage::Views => self.views(lang, &mut outcome)?,
                Stage::Snapshot => self.snapshot(lang, &mut outcome)?,
                Stage::Score => self.score(lang, &mut outcome)?,
                Stage::Report => unreachable!("handled above"),
            }
            self.invalidate_dependents(stage, lang)?;
            outcome.computed.push(lang.clone());
        }
        if stage == Stage::Score {
            self.score_all(&mut outcome)?;
        }
        Ok(outcome)
    }

    fn identify(&self, lang: &str, outcome: &mut StageOutcome) -> Result<(), PipelineError> {
        let l = self.config.language(lang);
        let methods = &self.config.identify.methods;
        let mut corpus = CorpusSpec::new(lang);
        let mut report = IdentifyReport::default();

        if methods.contains(&Method::Categories) {
            let page = l.page_dump.as_deref().expect("validated");
            let links = l.categorylinks_dump.as_deref().expect("validated");
            let graph = load_category_graph(open_input(page)?, open_input(links)?)?;
            let excluded: HashSet<String> = l.category_exclusions.iter().map(|c| normalize_title(c)).collect();
            let mut found = CorpusSpec::new(lang);
            for root in &l.category_roots {
                if excluded.contains(&normalize_title(root)) {
                    report.skipped_roots.push(root.clone());
                    continue;
                }
                let depth = l.root_depths.get(root).copied().unwrap_or(self.config.identify.category_depth);
                let ids = traverse_categories(&graph, &BTreeSet::from([root.clone()]), &l.category_exclusions, depth)?;
                for id in ids {
                    if let Some(info) = graph.page(id) {
                        let mut article = CorpusArticle::new(&info.title, Method::Categories);
                        article.page_id = Some(id);
                        found.insert(article);
                    }
                }
            }
            report.per_method.insert(Method::Categories, found.len());
            corpus.union(found)?;
        }

        if methods.contains(&Method::Wikidata) {
            let endpoint_url = url::Url::parse(&self.config.sources.sparql_endpoint).map_err(|e| {
                SparqlError::Malformed(format!("invalid endpoint {}: {e}", self.config.sources.sparql_endpoint))
            })?;
            let http = HttpSparqlEndpoint::new(endpoint_url, self.fetch.clone());
            let endpoint = CachedSparql {
                inner: &http,
                cache: &self.cache,
            };
            let mut items = item_ids_from_results(&endpoint.select(&build_outbreak_query())?);
            items.extend(item_ids_from_results(&endpoint.select(&build_timeline_query())?));
            report.wikidata_items = items.len();
            let langs = BTreeSet::from([lang.to_string()]);
            let mut specs = resolve_sitelinks(&items, &langs, &endpoint, self.config.identify.sparql_batch)?;
            let found = specs.remove(lang).unwrap_or_else(|| CorpusSpec::new(lang));
            report.per_method.insert(Method::Wikidata, found.len());
            corpus.union(found)?;
        }

        if methods.contains(&Method::Infobox) {
            let criteria = self.config.identify.infobox_criteria();
            let end_day = DateWindow::new(self.window.end, self.window.end).expect("single day");
            let filtered = match self.config.sources.revisions {
                RevisionMode::Dump => {
                    let path = l.history_dump.as_deref().expect("validated");
                    let dump = read_history_dump(open_input(path)?, lang, None, Some(&end_day))?;
                    let store = dump.template_store(std::iter::empty())?;
                    let candidates = CorpusSpec::from_titles(lang, dump.articles.keys(), Method::Infobox);
                    filter_by_infobox(&candidates, |t| dump.latest_text(t).map(str::to_string), &criteria, &store)
                }
                RevisionMode::Api => {
                    let source = self.revision_source();
                    let store = TemplateStore::builder().build()?;
                    let candidates = CorpusSpec::from_titles(lang, &l.infobox_candidates, Method::Infobox);
                    let mut texts = BTreeMap::new();
                    for title in candidates.titles() {
                        let fetched = source.fetch_revisions(&ArticleRef::new(lang, title), &end_day)?;
                        if let Some(rev) = fetched.revisions.last() {
                            texts.insert(title.to_string(), rev.wikitext.clone());
                        }
                    }
                    filter_by_infobox(&candidates, |t| texts.get(t).cloned(), &criteria, &store)
                }
            };
            report.per_method.insert(Method::Infobox, filtered.retained.len());
            report.infobox_dropped = filtered.dropped;
            report.infobox_missing_text = filtered.missing_text;
            corpus.union(filtered.retained)?;
        }

        if methods.contains(&Method::Manual) {
            let found = CorpusSpec::from_titles(lang, &l.manual_articles, Method::Manual);
            report.per_method.insert(Method::Manual, found.len());
            corpus.union(found)?;
        }

        corpus.validate()?;
        if corpus.is_empty() {
            warn!(lang, "identified corpus is empty");
        }
        outcome.add(lang, "articles", corpus.len() as u64);
        for (method, n) in &report.per_method {
            outcome.add(lang, &format!("by_{method}"), *n as u64);
        }
        outcome.add(lang, "infobox_missing_text", report.infobox_missing_text.len() as u64);
        write_json(&self.artifact(lang, "identify.json"), &report)?;
        write_json(&self.artifact(lang, "corpus.json"), &corpus)?;
        Ok(())
    }

    fn load_corpus(&self, lang: &str) -> Result<CorpusSpec, PipelineError> {
        read_json(&self.artifact(lang, "corpus.json"))
    }

    fn fetch_revisions(&self, lang: &str, outcome: &mut StageOutcome) -> Result<(), PipelineError> {
        let l = self.config.language(lang);
        let corpus = self.load_corpus(lang)?;
        let titles: Vec<String> = corpus.titles().map(str::to_string).collect();
        let mut fetched: BTreeMap<String, RevisionFetch> = BTreeMap::new();
        let mut xml_redirects = None;

        let templates = match self.config.sources.revisions {
            RevisionMode::Dump => {
                let path = l.history_dump.as_deref().expect("validated");
                let wanted: HashSet<String> = titles.iter().cloned().collect();
                let dump = read_history_dump(open_input(path)?, lang, Some(&wanted), Some(&self.window))?;
                for title in &titles {
                    let entry = match dump.articles.get(title) {
                        Some(revs) => RevisionFetch {
                            revisions: revs.clone(),
                            missing: false,
                            diagnostics: Vec::new(),
                        },
                        None => RevisionFetch {
                            revisions: Vec::new(),
                            missing: true,
                            diagnostics: vec![format!("{lang}:{title} not found in dump")],
                        },
                    };
                    fetched.insert(title.clone(), entry);
                }
                xml_redirects = Some(dump.redirects.clone());
                TemplateSet {
                    templates: dump.templates,
                    aliases: dump.template_aliases,
                }
            }
            RevisionMode::Api => {
                let source = self.revision_source();
                for title in &titles {
                    let entry = source.fetch_revisions(&ArticleRef::new(lang, title), &self.window)?;
                    fetched.insert(title.clone(), entry);
                }
                self.fetch_templates(lang, &fetched)?
            }
        };

        let edges: Vec<(String, String)> = match self.config.sources.redirects {
            RedirectMode::Xml => match xml_redirects {
                Some(r) => r.into_iter().collect(),
                None => {
                    let path = l.history_dump.as_deref().expect("validated");
                    let none = HashSet::new();
                    read_history_dump(open_input(path)?, lang, Some(&none), None)?
                        .redirects
                        .into_iter()
                        .collect()
                }
            },
            RedirectMode::Sql => read_redirect_dumps(
                open_input(l.page_dump.as_deref().expect("validated"))?,
                open_input(l.redirect_dump.as_deref().expect("validated"))?,
            )?,
            RedirectMode::Table => read_redirect_table(open_input(l.redirect_table.as_deref().expect("validated"))?)?,
            RedirectMode::Api => {
                let key = format!("{lang}\t{}", titles.join("\n"));
                self.cache
                    .get_or_fetch("redirects", &key, || {
                        fetch_api_redirects(&self.config.sources.api_endpoint, lang, &titles, &self.fetch)
                    })
                    .map_err(cache_err)?
            }
            RedirectMode::None => Vec::new(),
        };
        let redirects: RedirectOutcome = build_redirect_map(&corpus, edges);
        for d in &redirects.diagnostics {
            warn!(lang, "{d}");
        }

        outcome.add(lang, "articles", fetched.len() as u64);
        outcome.add(lang, "missing_articles", fetched.values().filter(|f| f.missing).count() as u64);
        outcome.add(lang, "revisions", fetched.values().map(|f| f.revisions.len() as u64).sum());
        outcome.add(lang, "templates", templates.templates.len() as u64);
        outcome.add(lang, "alternative_titles", redirects.map.alternatives().len() as u64);
        outcome.add(lang, "redirect_cycle_titles", redirects.cycles.len() as u64);

        write_json(&self.artifact(lang, "redirects.json"), &redirects)?;
        write_json(&self.artifact(lang, "templates.json"), &templates)?;
        let dir = self.artifact(lang, "revisions");
        remove_path(&dir)?;
        let mut index = RevisionIndex::default();
        for (title, fetch) in fetched {
            let file = revision_file(&title);
            write_json(&dir.join(&file), &fetch)?;
            index.articles.insert(
                title,
                RevisionEntry {
                    file,
                    revisions: fetch.revisions.len(),
                    missing: fetch.missing,
                    diagnostics: fetch.diagnostics,
                },
            );
        }
        write_json(&self.artifact(lang, "revisions.json"), &index)
    }

    /// Fetches the histories of templates used by the articles, following
    /// nested templates and template redirects up to the expansion depth.
    fn fetch_templates(&self, lang: &str, fetched: &BTreeMap<String, RevisionFetch>) -> Result<TemplateSet, PipelineError> {
        let verbatim: HashSet<String> = self.verbatim_templates(lang).into_iter().collect();
        let api = ApiRevisionSource::new(self.config.sources.api_endpoint.clone(), self.fetch.clone());
        let until = self.window.end_instant();
        let mut set = TemplateSet::default();
        let mut seen: HashSet<String> = HashSet::new();
        let mut pending: BTreeSet<String> = fetched
            .values()
            .flat_map(|f| f.revisions.iter())
            .flat_map(|r| template_names(&r.wikitext))
            .collect();
        for _ in 0..=self.config.max_depth {
            if pending.is_empty() {
                break;
            }
            let mut next = BTreeSet::new();
            for name in std::mem::take(&mut pending) {
                if verbatim.contains(&name) || !seen.insert(name.clone()) {
                    continue;
                }
                let key = format!("{lang}\t{name}\t{until}");
                let history: RevisionFetch = self
                    .cache
                    .get_or_fetch("templates", &key, || api.template_history(lang, &format!("Template:{name}"), until))
                    .map_err(cache_err)?;
                if history.missing || history.revisions.is_empty() {
                    continue;
                }
                let latest = &history.revisions[history.revisions.len() - 1].wikitext;
                if let Some(c) = REDIRECT_TEXT.captures(latest) {
                    let raw = &c[1];
                    let target = normalize_template_name(raw.split_once(':').map_or(raw, |(_, rest)| rest));
                    next.insert(target.clone());
                    set.aliases.insert(name, target);
                    continue;
                }
                for rev in &history.revisions {
                    next.extend(template_names(&rev.wikitext));
                }
                set.templates.insert(
                    name,
                    history.revisions.into_iter().map(|r| (r.timestamp, r.wikitext)).collect(),
                );
            }
            pending = next;
        }
        Ok(set)
    }

    fn extract(&self, lang: &str, outcome: &mut StageOutcome) -> Result<(), PipelineError> {
        let index: RevisionIndex = read_json(&self.artifact(lang, "revisions.json"))?;
        let templates: TemplateSet = read_json(&self.artifact(lang, "templates.json"))?;
        let verbatim = self.verbatim_templates(lang);
        let store = templates.store(verbatim.iter().map(String::as_str))?;
        let config = self.config.extract_config(lang);
        let allowlist = self.config.nonref_allowlist(lang);
        let rules = self.load_psl()?;
        let dir = self.artifact(lang, "revisions");

        let results: Vec<Result<(String, ArticleRefs), PipelineError>> = index
            .articles
            .par_iter()
            .map(|(title, entry)| {
                let fetch: RevisionFetch = read_json(&dir.join(&entry.file))?;
                let refs = extract_article(
                    &fetch.revisions,
                    &self.window,
                    &store,
                    self.config.max_depth,
                    &config,
                    &allowlist,
                    &rules,
                );
                Ok((title.clone(), refs))
            })
            .collect();
        let mut refs: BTreeMap<String, ArticleRefs> = BTreeMap::new();
        for r in results {
            let (title, article) = r?;
            outcome.add(lang, "revisions_extracted", article.revisions.len() as u64);
            for (k, v) in &article.diagnostics {
                outcome.add(lang, k, *v);
            }
            refs.insert(title, article);
        }
        write_json(&self.artifact(lang, "refs.json"), &refs)
    }

    fn views(&self, lang: &str, outcome: &mut StageOutcome) -> Result<(), PipelineError> {
        let l = self.config.language(lang);
        let redirects: RedirectOutcome = read_json(&self.artifact(lang, "redirects.json"))?;
        let map = &redirects.map;
        let ingest: PageViewIngest = match self.config.sources.pageviews {
            PageViewMode::Dump => ingest_pageview_dumps(&expand_files(&l.pageview_files)?, lang, map, &self.window)?,
            PageViewMode::Table => {
                let path = l.pageview_table.as_deref().expect("validated");
                ingest_pageview_table(open_input(path)?, lang, map, &self.window)?
            }
            PageViewMode::Api => ApiPageViews::new(self.config.sources.pageview_api.clone(), self.fetch.clone())
                .with_cache(self.cache.clone())
                .ingest(lang, map, &self.window)?,
        };
        let t = ingest.tally;
        outcome.add(lang, "lines", t.lines);
        outcome.add(lang, "malformed", t.malformed);
        outcome.add(lang, "matched_views", t.matched_views);
        outcome.add(lang, "clamped", t.clamped);
        outcome.add(lang, "records", ingest.records.len() as u64);
        write_json(&self.artifact(lang, "pageviews.json"), &ingest)
    }

    fn snapshot(&self, lang: &str, outcome: &mut StageOutcome) -> Result<(), PipelineError> {
        let corpus = self.load_corpus(lang)?;
        let refs: BTreeMap<String, ArticleRefs> = read_json(&self.artifact(lang, "refs.json"))?;
        let views: PageViewIngest = read_json(&self.artifact(lang, "pageviews.json"))?;
        let mut by_title: BTreeMap<&str, Vec<PageViewRecord>> = BTreeMap::new();
        for r in &views.records {
            by_title.entry(r.title.as_str()).or_default().push(r.clone());
        }
        let titles: Vec<&str> = corpus.titles().collect();
        let snapshots: Vec<ArticleDaySnapshot> = titles
            .par_iter()
            .map(|title| {
                let revisions = refs.get(*title).map_or(&[][..], |r| &r.revisions[..]);
                let views = by_title.get(title).map_or(&[][..], |v| &v[..]);
                build_snapshots(title, revisions, views, &self.window)
            })
            .flatten_iter()
            .collect();
        outcome.add(lang, "snapshots", snapshots.len() as u64);
        write_json(&self.artifact(lang, "snapshots.json"), &snapshots)
    }

    fn series(snapshots: &[ArticleDaySnapshot]) -> Vec<ScoreSeries> {
        ModelId::ALL
            .par_iter()
            .map(|m| build_series(snapshots, *m))
            .flatten_iter()
            .collect()
    }

    fn score(&self, lang: &str, outcome: &mut StageOutcome) -> Result<(), PipelineError> {
        let snapshots: Vec<ArticleDaySnapshot> = read_json(&self.artifact(lang, "snapshots.json"))?;
        let series = Self::series(&snapshots);
        outcome.add(lang, "domains", series.iter().filter(|s| s.model == ModelId::F).count() as u64);
        write_json(&self.artifact(lang, "scores.json"), &series)
    }

    fn score_all(&self, outcome: &mut StageOutcome) -> Result<(), PipelineError> {
        let path = self.artifact(ALL_SCOPE, "scores.json");
        if !self.options.force {
            if let Ok(existing) = read_json::<AllScores>(&path) {
                if existing.languages == self.languages {
                    outcome.skipped.push(ALL_SCOPE.to_string());
                    return Ok(());
                }
            }
        }
        let mut snapshots = Vec::new();
        for lang in &self.languages {
            snapshots.extend(read_json::<Vec<ArticleDaySnapshot>>(&self.artifact(lang, "snapshots.json"))?);
        }
        let series = Self::series(&snapshots);
        outcome.add(ALL_SCOPE, "domains", series.iter().filter(|s| s.model == ModelId::F).count() as u64);
        write_json(
            &path,
            &AllScores {
                languages: self.languages.clone(),
                series,
            },
        )?;
        outcome.computed.push(ALL_SCOPE.to_string());
        Ok(())
    }

    fn report(&self, outcome: &mut StageOutcome) -> Result<(), PipelineError> {
        let models = self.options.models.clone().unwrap_or_else(|| ModelId::ALL.to_vec());
        let output = &self.config.output_dir;
        let mut by_lang: BTreeMap<String, Vec<ScoreSeries>> = BTreeMap::new();
        for lang in &self.languages {
            by_lang.insert(lang.clone(), read_json(&self.artifact(lang, "scores.json"))?);
        }
        let all: AllScores = read_json(&self.artifact(ALL_SCOPE, "scores.json"))?;
        for model in &models {
            for (lang, series) in by_lang.iter().chain(std::iter::once((&ALL_SCOPE.to_string(), &all.series))) {
                let written = emit_rank_timeline(series, lang, *model, self.config.top_k, output)?;
                outcome.add(lang, &format!("{model}.rows"), written.rows as u64);
            }
            emit_language_heatmap(&by_lang, *model, output)?;
        }
        outcome.computed.extend(self.languages.iter().cloned());
        outcome.computed.push(ALL_SCOPE.to_string());
        Ok(())
    }
}
