//! Topic-scoped citation extraction and source reliability ranking for
//! Wikipedia articles.

pub mod cache;
pub mod calendar;
pub mod config;
pub mod corpus;
pub mod domain;
pub mod http;
pub mod ingest;
pub mod pipeline;
pub mod report;
pub mod score;
pub mod title;
pub mod wikitext;
