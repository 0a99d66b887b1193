//! Pipeline configuration (TOML).
//!
//! Relative paths are resolved against the directory holding the config
//! file. See `docs/config.md` for every key.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::calendar::DateWindow;
use crate::corpus::{InfoboxCriteria, Method};
use crate::domain::PslSections;
use crate::http::{HttpConfig, RetryPolicy};
use crate::wikitext::{
    ExtractConfig, NonRefAllowlist, DEFAULT_CITATION_TEMPLATES, DEFAULT_EXCLUDED_PARAMS, DEFAULT_MAX_DEPTH,
    DEFAULT_URL_PARAMS,
};

/// Wikipedia language editions accepted in `languages`.
pub const KNOWN_LANGUAGES: &[&str] = &[
    "af", "als", "am", "an", "ar", "arz", "as", "ast", "az", "azb", "ba", "bar", "be", "bg", "bn", "bo", "br", "bs",
    "ca", "ce", "ceb", "ckb", "co", "cs", "cv", "cy", "da", "de", "el", "en", "eo", "es", "et", "eu", "fa", "fi",
    "fo", "fr", "fy", "ga", "gd", "gl", "gu", "he", "hi", "hr", "hsb", "ht", "hu", "hy", "ia", "id", "ig", "is",
    "it", "ja", "jv", "ka", "kk", "km", "kn", "ko", "ku", "ky", "la", "lb", "li", "lmo", "lt", "lv", "mg", "min",
    "mk", "ml", "mn", "mr", "ms", "my", "mzn", "nds", "ne", "new", "nl", "nn", "no", "oc", "or", "os", "pa", "pl",
    "pms", "pnb", "ps", "pt", "qu", "ro", "ru", "rw", "sa", "sah", "sco", "sd", "sh", "si", "simple", "sk", "sl",
    "so", "sq", "sr", "su", "sv", "sw", "ta", "te", "tg", "th", "tl", "tr", "tt", "uk", "ur", "uz", "vec", "vi",
    "war", "wuu", "xmf", "yi", "yo", "yue", "zh", "zh-min-nan", "zh-yue", "zu",
];

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("no languages configured")]
    NoLanguages,
    #[error("unknown language code {0:?}")]
    UnknownLanguage(String),
    #[error("window start {start} is after end {end}")]
    InvertedWindow { start: NaiveDate, end: NaiveDate },
    #[error("{what} for {language:?} is required by the selected modes but not set")]
    MissingInput { language: String, what: &'static str },
    #[error("{what} does not exist: {path}")]
    MissingPath { what: String, path: PathBuf },
    #[error("a non-empty http.user_agent is required when remote sources are used")]
    MissingUserAgent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RevisionMode {
    #[default]
    Dump,
    Api,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RedirectMode {
    /// Redirect pages found in the history dump.
    #[default]
    Xml,
    Sql,
    Api,
    Table,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PageViewMode {
    #[default]
    Dump,
    Api,
    Table,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HttpSettings {
    #[serde(default)]
    pub user_agent: String,
    #[serde(default = "default_rate")]
    pub max_requests_per_second: f64,
    #[serde(default)]
    pub retry: RetrySettings,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_rate() -> f64 {
    1.0
}

fn default_timeout() -> u64 {
    60
}

impl Default for HttpSettings {
    fn default() -> Self {
        HttpSettings {
            user_agent: String::new(),
            max_requests_per_second: default_rate(),
            retry: RetrySettings::default(),
            timeout_secs: default_timeout(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrySettings {
    pub max_retries: u32,
    pub base_ms: u64,
    pub cap_ms: u64,
}

impl Default for RetrySettings {
    fn default() -> Self {
        let p = RetryPolicy::default();
        RetrySettings {
            max_retries: p.max_retries,
            base_ms: p.base.as_millis() as u64,
            cap_ms: p.cap.as_millis() as u64,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sources {
    #[serde(default)]
    pub revisions: RevisionMode,
    #[serde(default)]
    pub redirects: RedirectMode,
    #[serde(default)]
    pub pageviews: PageViewMode,
    #[serde(default = "default_api")]
    pub api_endpoint: String,
    #[serde(default = "default_pageview_api")]
    pub pageview_api: String,
    #[serde(default = "default_sparql")]
    pub sparql_endpoint: String,
}

fn default_api() -> String {
    "https://{lang}.wikipedia.org/w/api.php".to_string()
}

fn default_pageview_api() -> String {
    crate::ingest::DEFAULT_PAGEVIEW_API.to_string()
}

fn default_sparql() -> String {
    "https://query.wikidata.org/sparql".to_string()
}

impl Default for Sources {
    fn default() -> Self {
        Sources {
            revisions: RevisionMode::default(),
            redirects: RedirectMode::default(),
            pageviews: PageViewMode::default(),
            api_endpoint: default_api(),
            pageview_api: default_pageview_api(),
            sparql_endpoint: default_sparql(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdentifySettings {
    #[serde(default = "default_methods")]
    pub methods: BTreeSet<Method>,
    #[serde(default = "default_category_depth")]
    pub category_depth: usize,
    #[serde(default = "default_infobox_names")]
    pub infobox_names: BTreeSet<String>,
    #[serde(default = "default_infobox_param")]
    pub infobox_param: String,
    #[serde(default = "default_infobox_value")]
    pub infobox_value: String,
    #[serde(default = "default_sparql_batch")]
    pub sparql_batch: usize,
}

fn default_methods() -> BTreeSet<Method> {
    BTreeSet::from([Method::Categories, Method::Manual])
}

fn default_category_depth() -> usize {
    3
}

fn default_infobox_names() -> BTreeSet<String> {
    InfoboxCriteria::covid_outbreak().names
}

fn default_infobox_param() -> String {
    InfoboxCriteria::covid_outbreak().param
}

fn default_infobox_value() -> String {
    InfoboxCriteria::covid_outbreak().value_contains
}

fn default_sparql_batch() -> usize {
    200
}

impl Default for IdentifySettings {
    fn default() -> Self {
        IdentifySettings {
            methods: default_methods(),
            category_depth: default_category_depth(),
            infobox_names: default_infobox_names(),
            infobox_param: default_infobox_param(),
            infobox_value: default_infobox_value(),
            sparql_batch: default_sparql_batch(),
        }
    }
}

impl IdentifySettings {
    pub fn infobox_criteria(&self) -> InfoboxCriteria {
        InfoboxCriteria {
            names: self.infobox_names.clone(),
            param: self.infobox_param.clone(),
            value_contains: self.infobox_value.clone(),
        }
    }
}

/// Inputs and overrides of one language edition.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LanguageSettings {
    #[serde(default)]
    pub category_roots: BTreeSet<String>,
    #[serde(default)]
    pub category_exclusions: BTreeSet<String>,
    /// Per-root traversal depth overriding `identify.category_depth`.
    #[serde(default)]
    pub root_depths: BTreeMap<String, usize>,
    #[serde(default)]
    pub manual_articles: Vec<String>,
    /// Titles checked by the infobox method when revisions come from the API.
    #[serde(default)]
    pub infobox_candidates: Vec<String>,
    pub page_dump: Option<PathBuf>,
    pub categorylinks_dump: Option<PathBuf>,
    pub redirect_dump: Option<PathBuf>,
    pub history_dump: Option<PathBuf>,
    pub redirect_table: Option<PathBuf>,
    pub pageview_table: Option<PathBuf>,
    /// Hourly pageview dump files, or directories holding them.
    #[serde(default)]
    pub pageview_files: Vec<PathBuf>,
    /// Added to the default citation template list.
    #[serde(default)]
    pub citation_templates: Vec<String>,
    /// Replaces the default URL parameter names when non-empty.
    #[serde(default)]
    pub url_params: Vec<String>,
    /// `[template, parameter]` pairs whose URLs count outside refs.
    #[serde(default)]
    pub nonref_sources: Vec<(String, String)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub languages: Vec<String>,
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub output_dir: PathBuf,
    pub cache_dir: PathBuf,
    pub psl_path: PathBuf,
    #[serde(default)]
    pub psl_sections: PslSections,
    #[serde(default = "default_top_k")]
    pub top_k: u32,
    #[serde(default = "default_max_depth")]
    pub max_depth: usize,
    #[serde(default = "default_true")]
    pub include_ref_groups: bool,
    #[serde(default)]
    pub offline: bool,
    #[serde(default)]
    pub sources: Sources,
    #[serde(default)]
    pub http: HttpSettings,
    #[serde(default)]
    pub identify: IdentifySettings,
    #[serde(default)]
    pub lang: BTreeMap<String, LanguageSettings>,
}

fn default_top_k() -> u32 {
    10
}

fn default_max_depth() -> usize {
    DEFAULT_MAX_DEPTH
}

fn default_true() -> bool {
    true
}

impl PipelineConfig {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let mut cfg: PipelineConfig = toml::from_str(text)?;
        cfg.resolve_paths(base_dir);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        PipelineConfig::from_toml(&text, base)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        fix(&mut self.cache_dir);
        fix(&mut self.psl_path);
        for l in self.lang.values_mut() {
            for p in [
                &mut l.page_dump,
                &mut l.categorylinks_dump,
                &mut l.redirect_dump,
                &mut l.history_dump,
                &mut l.redirect_table,
                &mut l.pageview_table,
            ]
            .into_iter()
            .flatten()
            {
                fix(p);
            }
            l.pageview_files.iter_mut().for_each(fix);
        }
    }

    pub fn window(&self) -> Result<DateWindow, ConfigError> {
        DateWindow::new(self.start, self.end).map_err(|_| ConfigError::InvertedWindow {
            start: self.start,
            end: self.end,
        })
    }

    pub fn language(&self, code: &str) -> LanguageSettings {
        self.lang.get(code).cloned().unwrap_or_default()
    }

    fn needs_network(&self) -> bool {
        self.sources.revisions == RevisionMode::Api
            || self.sources.redirects == RedirectMode::Api
            || self.sources.pageviews == PageViewMode::Api
            || self.identify.methods.contains(&Method::Wikidata)
    }

    /// Checks languages, the window, and that every input the selected
    /// modes need is configured and present.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.languages.is_empty() {
            return Err(ConfigError::NoLanguages);
        }
        for l in self.languages.iter().chain(self.lang.keys()) {
            if !KNOWN_LANGUAGES.contains(&l.as_str()) {
                return Err(ConfigError::UnknownLanguage(l.clone()));
            }
        }
        self.window()?;
        if self.needs_network() && !self.offline && self.http.user_agent.trim().is_empty() {
            return Err(ConfigError::MissingUserAgent);
        }
        exists("psl_path", &self.psl_path)?;
        let methods = &self.identify.methods;
        for code in &self.languages {
            let l = self.language(code);
            let require = |what: &'static str, p: &Option<PathBuf>| -> Result<(), ConfigError> {
                match p {
                    Some(p) => exists(&format!("{what} for {code}"), p),
                    None => Err(ConfigError::MissingInput {
                        language: code.clone(),
                        what,
                    }),
                }
            };
            if methods.contains(&Method::Categories) {
                require("page_dump", &l.page_dump)?;
                require("categorylinks_dump", &l.categorylinks_dump)?;
            }
            if self.sources.revisions == RevisionMode::Dump {
                require("history_dump", &l.history_dump)?;
            }
            match self.sources.redirects {
                RedirectMode::Xml => require("history_dump", &l.history_dump)?,
                RedirectMode::Sql => {
                    require("page_dump", &l.page_dump)?;
                    require("redirect_dump", &l.redirect_dump)?;
                }
                RedirectMode::Table => require("redirect_table", &l.redirect_table)?,
                RedirectMode::Api | RedirectMode::None => {}
            }
            match self.sources.pageviews {
                PageViewMode::Dump => {
                    if l.pageview_files.is_empty() {
                        return Err(ConfigError::MissingInput {
                            language: code.clone(),
                            what: "pageview_files",
                        });
                    }
                    for p in &l.pageview_files {
                        exists(&format!("pageview file for {code}"), p)?;
                    }
                }
                PageViewMode::Table => require("pageview_table", &l.pageview_table)?,
                PageViewMode::Api => {}
            }
        }
        Ok(())
    }

    pub fn http_config(&self) -> HttpConfig {
        HttpConfig {
            user_agent: self.http.user_agent.clone(),
            max_requests_per_second: self.http.max_requests_per_second,
            retry: RetryPolicy {
                max_retries: self.http.retry.max_retries,
                base: std::time::Duration::from_millis(self.http.retry.base_ms),
                cap: std::time::Duration::from_millis(self.http.retry.cap_ms),
            },
            timeout: std::time::Duration::from_secs(self.http.timeout_secs),
        }
    }

    /// Citation template and URL parameter settings of one language.
    pub fn extract_config(&self, code: &str) -> ExtractConfig {
        let l = self.language(code);
        let templates = DEFAULT_CITATION_TEMPLATES
            .iter()
            .map(|s| s.to_string())
            .chain(l.citation_templates.iter().cloned());
        let url_params: Vec<String> = if l.url_params.is_empty() {
            DEFAULT_URL_PARAMS.iter().map(|s| s.to_string()).collect()
        } else {
            l.url_params.clone()
        };
        ExtractConfig::new(templates, url_params)
            .with_excluded_params(DEFAULT_EXCLUDED_PARAMS.iter().copied())
            .with_groups(self.include_ref_groups)
    }

    pub fn nonref_allowlist(&self, code: &str) -> NonRefAllowlist {
        NonRefAllowlist::new(self.language(code).nonref_sources)
    }
}

fn exists(what: &str, path: &Path) -> Result<(), ConfigError> {
    if path.exists() {
        Ok(())
    } else {
        Err(ConfigError::MissingPath {
            what: what.to_string(),
            path: path.to_path_buf(),
        })
    }
}
