//! Infobox-based topic filter.

use std::collections::BTreeSet;

use super::{CorpusSpec, Method};
use crate::title::normalize_template_name;
use crate::wikitext::{strip_comments, template_instances, TemplateStore};

/// Which infoboxes count and what their topic parameter must contain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InfoboxCriteria {
    /// Infobox template names; aliases are resolved through the store.
    pub names: BTreeSet<String>,
    pub param: String,
    /// Case-insensitive substring the parameter value must contain.
    pub value_contains: String,
}

impl InfoboxCriteria {
    /// Outbreak infobox whose `disease` parameter mentions COVID-19.
    pub fn covid_outbreak() -> Self {
        InfoboxCriteria {
            names: BTreeSet::from(["Infobox outbreak".to_string(), "Infobox pandemic".to_string()]),
            param: "disease".to_string(),
            value_contains: "COVID-19".to_string(),
        }
    }

    /// Whether `wikitext` contains a matching infobox.
    pub fn matches(&self, wikitext: &str, store: &TemplateStore) -> bool {
        let wanted: BTreeSet<String> = self
            .names
            .iter()
            .map(|n| store.canonical(&normalize_template_name(n)))
            .collect();
        let needle = self.value_contains.to_lowercase();
        let param = self.param.trim().to_lowercase();
        template_instances(&strip_comments(wikitext))
            .into_iter()
            .filter(|t| wanted.contains(&store.canonical(&t.name)))
            .any(|t| {
                t.params
                    .iter()
                    .any(|(k, v)| k.to_lowercase() == param && v.to_lowercase().contains(&needle))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InfoboxFilterOutcome {
    pub retained: CorpusSpec,
    /// Titles without a matching infobox.
    pub dropped: Vec<String>,
    /// Titles with no text available.
    pub missing_text: Vec<String>,
}

/// Keeps candidates whose latest text carries a matching infobox; kept
/// articles gain the infobox provenance.
pub fn filter_by_infobox<F>(
    candidates: &CorpusSpec,
    mut latest_text: F,
    criteria: &InfoboxCriteria,
    store: &TemplateStore,
) -> InfoboxFilterOutcome
where
    F: FnMut(&str) -> Option<String>,
{
    let mut retained = CorpusSpec::new(candidates.language.clone());
    let mut dropped = Vec::new();
    let mut missing_text = Vec::new();
    for article in candidates.articles() {
        match latest_text(&article.title) {
            None => missing_text.push(article.title.clone()),
            Some(text) if criteria.matches(&text, store) => {
                let mut kept = article.clone();
                kept.provenance.insert(Method::Infobox);
                retained.insert(kept);
            }
            Some(_) => dropped.push(article.title.clone()),
        }
    }
    InfoboxFilterOutcome {
        retained,
        dropped,
        missing_text,
    }
}
