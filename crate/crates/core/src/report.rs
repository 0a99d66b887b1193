//! Rank-timeline and heatmap reports.
//!
//! Reports are plain data: CSV and JSON under
//! `<output>/reports/{scope}/{model}/`, where scope is a language code or
//! `all` for the cross-language view.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::calendar::Month;
use crate::domain::SourceDomain;
use crate::score::{ModelId, ScoreSeries};

pub const CSV_HEADER: [&str; 6] = ["language", "month", "model", "domain", "score", "rank"];
pub const TIMELINE_CSV: &str = "rank_timeline.csv";
pub const TIMELINE_JSON: &str = "rank_timeline.json";
pub const HEATMAP_JSON: &str = "language_heatmap.json";
/// Rank threshold for heatmap membership.
pub const HEATMAP_TOP: u32 = 10;

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("I/O error writing report: {0}")]
    Io(#[from] io::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed report row: {0}")]
    Malformed(String),
}

/// One (scope, month, model, domain) line of a rank timeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub language: String,
    pub month: Month,
    pub model: ModelId,
    pub domain: SourceDomain,
    /// Rounded to six decimals, as written.
    pub score: f64,
    pub rank: u32,
}

/// Fixed six-decimal rendering of a score.
pub fn format_score(score: f64) -> String {
    format!("{score:.6}")
}

fn round_score(score: f64) -> f64 {
    format_score(score).parse().expect("formatted float parses")
}

/// Rows for domains ranked within `top_k` in at least one month, ordered
/// by month, then rank.
pub fn timeline_rows(series: &[ScoreSeries], scope: &str, model: ModelId, top_k: u32) -> Vec<ReportRow> {
    let mut rows = Vec::new();
    for s in series.iter().filter(|s| s.model == model) {
        if !s.monthly_rank.values().any(|r| *r <= top_k) {
            continue;
        }
        for (month, score) in &s.monthly {
            let Some(rank) = s.monthly_rank.get(month) else {
                continue;
            };
            rows.push(ReportRow {
                language: scope.to_string(),
                month: *month,
                model,
                domain: s.domain.clone(),
                score: round_score(*score),
                rank: *rank,
            });
        }
    }
    rows.sort_by(|a, b| a.month.cmp(&b.month).then(a.rank.cmp(&b.rank)));
    rows
}

pub fn write_csv<W: io::Write>(rows: &[ReportRow], out: W) -> Result<(), ReportError> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record([
            r.language.as_str(),
            &r.month.to_string(),
            r.model.as_str(),
            r.domain.as_str(),
            &format_score(r.score),
            &r.rank.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: io::Read>(input: R) -> Result<Vec<ReportRow>, ReportError> {
    let mut rdr = csv::Reader::from_reader(input);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(ReportError::Malformed(format!("unexpected header {header:?}")));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let bad = || ReportError::Malformed(format!("{rec:?}"));
        rows.push(ReportRow {
            language: rec[0].to_string(),
            month: rec[1].parse().map_err(|_| bad())?,
            model: rec[2].parse().map_err(|_| bad())?,
            domain: SourceDomain::new(&rec[3]),
            score: rec[4].parse().map_err(|_| bad())?,
            rank: rec[5].parse().map_err(|_| bad())?,
        });
    }
    Ok(rows)
}

pub fn report_dir(output: &Path, scope: &str, model: ModelId) -> PathBuf {
    output.join("reports").join(scope).join(model.as_str())
}

#[derive(Debug, Clone)]
pub struct TimelineOutput {
    pub csv: PathBuf,
    pub json: PathBuf,
    pub rows: usize,
}

/// Writes `rank_timeline.csv` and `rank_timeline.json` for one scope and
/// model. An empty selection still writes the header.
pub fn emit_rank_timeline(
    series: &[ScoreSeries],
    scope: &str,
    model: ModelId,
    top_k: u32,
    output: &Path,
) -> Result<TimelineOutput, ReportError> {
    let rows = timeline_rows(series, scope, model, top_k);
    if rows.is_empty() {
        tracing::warn!(scope, %model, "rank timeline selection is empty");
    }
    let dir = report_dir(output, scope, model);
    fs::create_dir_all(&dir)?;
    let csv_path = dir.join(TIMELINE_CSV);
    let mut buf = Vec::new();
    write_csv(&rows, &mut buf)?;
    fs::write(&csv_path, buf)?;
    let json_path = dir.join(TIMELINE_JSON);
    let mut json = serde_json::to_string_pretty(&rows).map_err(io::Error::other)?;
    json.push('\n');
    fs::write(&json_path, json)?;
    Ok(TimelineOutput {
        csv: csv_path,
        json: json_path,
        rows: rows.len(),
    })
}

/// Average monthly rank of each prominent domain in each language.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub model: ModelId,
    pub languages: Vec<String>,
    pub rows: Vec<HeatmapRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapRow {
    pub domain: SourceDomain,
    /// One cell per language, in `languages` order; null where the
    /// domain was never ranked.
    pub average_rank: Vec<Option<f64>>,
}

/// Domains ranked within the top ten in some month of some language, with
/// their mean monthly rank per language. Rows are sorted by domain.
pub fn language_heatmap(series_by_language: &BTreeMap<String, Vec<ScoreSeries>>, model: ModelId) -> Heatmap {
    let languages: Vec<String> = series_by_language.keys().cloned().collect();
    let mut selected: BTreeSet<&SourceDomain> = BTreeSet::new();
    let mut means: BTreeMap<(&SourceDomain, &str), f64> = BTreeMap::new();
    for (lang, series) in series_by_language {
        for s in series.iter().filter(|s| s.model == model) {
            if s.monthly_rank.is_empty() {
                continue;
            }
            if s.monthly_rank.values().any(|r| *r <= HEATMAP_TOP) {
                selected.insert(&s.domain);
            }
            let ranks: Vec<f64> = s.monthly_rank.values().map(|r| *r as f64).collect();
            means.insert(
                (&s.domain, lang.as_str()),
                round_score(crate::score::pairwise_sum(&ranks) / ranks.len() as f64),
            );
        }
    }
    let rows = selected
        .into_iter()
        .map(|d| HeatmapRow {
            domain: d.clone(),
            average_rank: languages.iter().map(|l| means.get(&(d, l.as_str())).copied()).collect(),
        })
        .collect();
    Heatmap { model, languages, rows }
}

/// Writes `language_heatmap.json` under the `all` scope.
pub fn emit_language_heatmap(
    series_by_language: &BTreeMap<String, Vec<ScoreSeries>>,
    model: ModelId,
    output: &Path,
) -> Result<PathBuf, ReportError> {
    let heatmap = language_heatmap(series_by_language, model);
    let dir = report_dir(output, "all", model);
    fs::create_dir_all(&dir)?;
    let path = dir.join(HEATMAP_JSON);
    let mut json = serde_json::to_string_pretty(&heatmap).map_err(io::Error::other)?;
    json.push('\n');
    fs::write(&path, json)?;
    Ok(path)
}
