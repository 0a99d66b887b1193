//! Per-article daily snapshots.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{ArticleDaySnapshot, PageViewRecord};
use crate::calendar::{end_of_day, DateWindow};
use crate::domain::{resolve_source, PslRuleSet, SourceDomain};
use crate::wikitext::ReferenceOccurrence;

/// Reference counts of one revision.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevisionRefs {
    pub timestamp: DateTime<Utc>,
    /// C(i) for any day this revision defines.
    pub total_refs: u64,
    pub domain_counts: BTreeMap<SourceDomain, u64>,
    /// URLs that did not resolve to a registrable domain.
    pub unresolved_urls: u64,
}

/// Counts the references of one revision.
///
/// Every ref-tag occurrence is a reference, with or without URLs. An
/// occurrence outside ref tags counts only if it carries a URL. Each
/// occurrence adds one to every distinct domain among its URLs, so no
/// domain count can exceed the total.
pub fn count_references(timestamp: DateTime<Utc>, occurrences: &[ReferenceOccurrence], rules: &PslRuleSet) -> RevisionRefs {
    let mut total_refs = 0;
    let mut domain_counts: BTreeMap<SourceDomain, u64> = BTreeMap::new();
    let mut unresolved_urls = 0;
    for occ in occurrences {
        if !occ.in_ref_tag && occ.urls.is_empty() {
            continue;
        }
        total_refs += 1;
        let mut seen = BTreeSet::new();
        for url in &occ.urls {
            match resolve_source(url, rules) {
                Ok(domain) => {
                    seen.insert(domain);
                }
                Err(_) => unresolved_urls += 1,
            }
        }
        for domain in seen {
            *domain_counts.entry(domain).or_insert(0) += 1;
        }
    }
    RevisionRefs {
        timestamp,
        total_refs,
        domain_counts,
        unresolved_urls,
    }
}

/// One snapshot per window day on which the article exists. `revisions`
/// must be sorted ascending; views default to zero.
pub fn build_snapshots(
    article_id: &str,
    revisions: &[RevisionRefs],
    views: &[PageViewRecord],
    window: &DateWindow,
) -> Vec<ArticleDaySnapshot> {
    let by_day: BTreeMap<_, _> = views
        .iter()
        .map(|v| (v.date, (v.views_all, v.views_human)))
        .collect();
    let mut out = Vec::with_capacity(window.len_days());
    for day in window.days() {
        let cutoff = end_of_day(day);
        let idx = revisions.partition_point(|r| r.timestamp <= cutoff);
        let Some(rev) = idx.checked_sub(1).map(|i| &revisions[i]) else {
            continue;
        };
        let (views_all, views_human) = by_day.get(&day).copied().unwrap_or((0, 0));
        out.push(ArticleDaySnapshot {
            article_id: article_id.to_string(),
            date: day,
            total_refs: rev.total_refs,
            domain_counts: rev.domain_counts.clone(),
            views_all,
            views_human,
        });
    }
    out
}
