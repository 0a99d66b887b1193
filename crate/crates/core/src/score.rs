//! Source scores per day, monthly means, and monthly ranks.
//!
//! F counts citations: the sum of C_s(i) over articles. PR weights each
//! citation by the article's views per reference, V(i)/C(i)·C_s(i), and
//! PR2 is PR with human views only.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::calendar::Month;
use crate::domain::SourceDomain;
use crate::ingest::ArticleDaySnapshot;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ModelId {
    F,
    PR,
    PR2,
}

impl ModelId {
    pub const ALL: [ModelId; 3] = [ModelId::F, ModelId::PR, ModelId::PR2];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelId::F => "F",
            ModelId::PR => "PR",
            ModelId::PR2 => "PR2",
        }
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("unknown model {0:?}, expected F, PR or PR2")]
pub struct UnknownModel(pub String);

impl FromStr for ModelId {
    type Err = UnknownModel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "F" => Ok(ModelId::F),
            "PR" => Ok(ModelId::PR),
            "PR2" => Ok(ModelId::PR2),
            _ => Err(UnknownModel(s.to_string())),
        }
    }
}

/// Which view count feeds V(i).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViewField {
    All,
    Human,
}

/// F score of every cited domain over one day's snapshots.
pub fn score_f(snapshots: &[ArticleDaySnapshot]) -> BTreeMap<SourceDomain, f64> {
    let mut counts: BTreeMap<SourceDomain, u64> = BTreeMap::new();
    for s in snapshots {
        for (d, c) in &s.domain_counts {
            *counts.entry(d.clone()).or_insert(0) += c;
        }
    }
    counts.into_iter().map(|(d, c)| (d, c as f64)).collect()
}

/// PR (or PR2) score over one day's snapshots. Snapshots without
/// references are skipped.
pub fn score_pr(snapshots: &[ArticleDaySnapshot], field: ViewField) -> BTreeMap<SourceDomain, f64> {
    let mut scores: BTreeMap<SourceDomain, f64> = BTreeMap::new();
    for s in snapshots {
        if s.total_refs == 0 {
            continue;
        }
        let views = match field {
            ViewField::All => s.views_all,
            ViewField::Human => s.views_human,
        } as f64;
        let total = s.total_refs as f64;
        for (d, c) in &s.domain_counts {
            *scores.entry(d.clone()).or_insert(0.0) += views * (*c as f64) / total;
        }
    }
    scores
}

pub fn score_day(snapshots: &[ArticleDaySnapshot], model: ModelId) -> BTreeMap<SourceDomain, f64> {
    match model {
        ModelId::F => score_f(snapshots),
        ModelId::PR => score_pr(snapshots, ViewField::All),
        ModelId::PR2 => score_pr(snapshots, ViewField::Human),
    }
}

/// Sum with pairwise (cascade) reduction.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const LEAF: usize = 8;
    if values.len() <= LEAF {
        return values.iter().sum();
    }
    let (a, b) = values.split_at(values.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

/// Mean of the daily values present in each calendar month.
pub fn aggregate_monthly(daily: &BTreeMap<NaiveDate, f64>) -> BTreeMap<Month, f64> {
    let mut by_month: BTreeMap<Month, Vec<f64>> = BTreeMap::new();
    for (day, v) in daily {
        by_month.entry(Month::of(*day)).or_default().push(*v);
    }
    by_month
        .into_iter()
        .map(|(m, vs)| (m, pairwise_sum(&vs) / vs.len() as f64))
        .collect()
}

/// Ranks 1..k by descending score, ties by ascending domain name.
pub fn rank_monthly(scores: &BTreeMap<SourceDomain, f64>) -> BTreeMap<SourceDomain, u32> {
    let mut order: Vec<(&SourceDomain, f64)> = scores.iter().map(|(d, s)| (d, *s)).collect();
    order.sort_by(|a, b| match b.1.total_cmp(&a.1) {
        Ordering::Equal => a.0.cmp(b.0),
        other => other,
    });
    order
        .into_iter()
        .enumerate()
        .map(|(i, (d, _))| (d.clone(), i as u32 + 1))
        .collect()
}

/// Scores of one domain under one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSeries {
    pub domain: SourceDomain,
    pub model: ModelId,
    pub daily: BTreeMap<NaiveDate, f64>,
    pub monthly: BTreeMap<Month, f64>,
    pub monthly_rank: BTreeMap<Month, u32>,
}

/// Scores every day present in `snapshots`, then aggregates and ranks by
/// month. A domain has a daily value only on days it is cited. Output is
/// sorted by domain.
pub fn build_series(snapshots: &[ArticleDaySnapshot], model: ModelId) -> Vec<ScoreSeries> {
    let mut by_day: BTreeMap<NaiveDate, Vec<ArticleDaySnapshot>> = BTreeMap::new();
    for s in snapshots {
        by_day.entry(s.date).or_default().push(s.clone());
    }
    let mut daily: BTreeMap<SourceDomain, BTreeMap<NaiveDate, f64>> = BTreeMap::new();
    for (day, snaps) in &by_day {
        for (d, score) in score_day(snaps, model) {
            daily.entry(d).or_default().insert(*day, score);
        }
    }
    series_from_daily(daily, model)
}

/// Builds series from per-domain daily scores.
pub fn series_from_daily(daily: BTreeMap<SourceDomain, BTreeMap<NaiveDate, f64>>, model: ModelId) -> Vec<ScoreSeries> {
    let mut series: Vec<ScoreSeries> = daily
        .into_iter()
        .map(|(domain, daily)| ScoreSeries {
            monthly: aggregate_monthly(&daily),
            domain,
            model,
            daily,
            monthly_rank: BTreeMap::new(),
        })
        .collect();
    let mut per_month: BTreeMap<Month, BTreeMap<SourceDomain, f64>> = BTreeMap::new();
    for s in &series {
        for (m, v) in &s.monthly {
            per_month.entry(*m).or_default().insert(s.domain.clone(), *v);
        }
    }
    let mut ranks: BTreeMap<SourceDomain, BTreeMap<Month, u32>> = BTreeMap::new();
    for (m, scores) in &per_month {
        for (d, r) in rank_monthly(scores) {
            ranks.entry(d).or_default().insert(*m, r);
        }
    }
    for s in &mut series {
        s.monthly_rank = ranks.remove(&s.domain).unwrap_or_default();
    }
    series
}
