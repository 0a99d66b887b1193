//! Category graph built from `page` and `categorylinks` SQL dumps.

use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};
use std::io::BufRead;

use super::sqldump::{SqlDumpError, SqlInsertReader, SqlRow, SqlValue};
use crate::title::normalize_title;

pub const ARTICLE_NAMESPACE: i64 = 0;
pub const CATEGORY_NAMESPACE: i64 = 14;

#[derive(Debug, thiserror::Error)]
pub enum CategoryError {
    #[error(transparent)]
    Dump(#[from] SqlDumpError),
    #[error("unknown root categories: {}", .0.join(", "))]
    UnknownRoots(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PageInfo {
    pub title: String,
    pub namespace: i64,
}

/// Pages of the article and category namespaces plus membership edges.
/// Titles use spaces, not underscores.
#[derive(Debug, Clone, Default)]
pub struct CategoryGraph {
    pub pages: HashMap<u64, PageInfo>,
    /// Category title to member page ids.
    pub membership: HashMap<String, BTreeSet<u64>>,
}

impl CategoryGraph {
    pub fn page(&self, id: u64) -> Option<&PageInfo> {
        self.pages.get(&id)
    }

    /// Whether `title` names a category page or a category with members.
    pub fn has_category(&self, title: &str) -> bool {
        self.membership.contains_key(title)
            || self
                .pages
                .values()
                .any(|p| p.namespace == CATEGORY_NAMESPACE && p.title == title)
    }

    pub fn is_empty(&self) -> bool {
        self.pages.is_empty() && self.membership.is_empty()
    }

    /// Titles of the given article ids, sorted.
    pub fn titles(&self, ids: &BTreeSet<u64>) -> Vec<String> {
        let mut out: Vec<String> = ids.iter().filter_map(|id| self.pages.get(id)).map(|p| p.title.clone()).collect();
        out.sort();
        out
    }
}

fn int(row: &SqlRow, idx: usize) -> Option<i64> {
    row.values.get(idx).and_then(SqlValue::as_int)
}

fn text(row: &SqlRow, idx: usize) -> Option<&str> {
    row.values.get(idx).and_then(SqlValue::as_str)
}

/// Builds the graph from `page` rows `(page_id, page_namespace, page_title, ...)`
/// and `categorylinks` rows `(cl_from, cl_to, ...)`. Rows from other tables
/// and pages in other namespaces are skipped.
pub fn load_category_graph<P: BufRead, C: BufRead>(page_dump: P, categorylinks_dump: C) -> Result<CategoryGraph, CategoryError> {
    let mut graph = CategoryGraph::default();
    for row in SqlInsertReader::new(page_dump) {
        let row = row?;
        if row.table != "page" {
            continue;
        }
        let (Some(id), Some(ns), Some(title)) = (int(&row, 0), int(&row, 1), text(&row, 2)) else {
            continue;
        };
        if ns != ARTICLE_NAMESPACE && ns != CATEGORY_NAMESPACE {
            continue;
        }
        graph.pages.insert(
            id as u64,
            PageInfo {
                title: normalize_title(title),
                namespace: ns,
            },
        );
    }
    for row in SqlInsertReader::new(categorylinks_dump) {
        let row = row?;
        if row.table != "categorylinks" {
            continue;
        }
        let (Some(from), Some(to)) = (int(&row, 0), text(&row, 1)) else {
            continue;
        };
        let from = from as u64;
        if !graph.pages.contains_key(&from) {
            continue;
        }
        graph.membership.entry(normalize_title(to)).or_default().insert(from);
    }
    Ok(graph)
}

/// Article-namespace members reachable from `roots` by breadth-first
/// descent through subcategories. Depth 0 yields the roots' direct
/// members; each further level follows one more subcategory link.
/// Excluded categories are never entered, so their subtrees contribute
/// only through other, non-excluded paths.
pub fn traverse_categories(
    graph: &CategoryGraph,
    roots: &BTreeSet<String>,
    exclusions: &BTreeSet<String>,
    max_depth: usize,
) -> Result<BTreeSet<u64>, CategoryError> {
    let roots: Vec<String> = roots.iter().map(|r| normalize_title(r)).collect();
    let exclusions: HashSet<String> = exclusions.iter().map(|e| normalize_title(e)).collect();
    let missing: Vec<String> = roots.iter().filter(|r| !graph.has_category(r)).cloned().collect();
    if !missing.is_empty() {
        return Err(CategoryError::UnknownRoots(missing));
    }

    let mut articles = BTreeSet::new();
    let mut visited: HashSet<&str> = HashSet::new();
    let mut queue: VecDeque<(&str, usize)> = VecDeque::new();
    for r in &roots {
        if !exclusions.contains(r) && visited.insert(r.as_str()) {
            queue.push_back((r.as_str(), 0));
        }
    }
    while let Some((category, depth)) = queue.pop_front() {
        let Some(members) = graph.membership.get(category) else {
            continue;
        };
        for id in members {
            let Some(page) = graph.pages.get(id) else {
                continue;
            };
            match page.namespace {
                ARTICLE_NAMESPACE => {
                    articles.insert(*id);
                }
                CATEGORY_NAMESPACE if depth < max_depth => {
                    let sub = page.title.as_str();
                    if !exclusions.contains(sub) && visited.insert(sub) {
                        queue.push_back((sub, depth + 1));
                    }
                }
                _ => {}
            }
        }
    }
    Ok(articles)
}
