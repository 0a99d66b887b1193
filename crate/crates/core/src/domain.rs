//! Registrable-domain resolution with the Public Suffix List.
//!
//! A cited URL is credited to its registrable domain: the longest public
//! suffix matching the host plus one more label. `news.bbc.co.uk` and
//! `www.bbc.co.uk` both resolve to `bbc.co.uk`.

use std::collections::HashSet;
use std::fmt;
use std::net::IpAddr;

use serde::{Deserialize, Serialize};
use url::{Host, Url};

const PRIVATE_BEGIN: &str = "===BEGIN PRIVATE DOMAINS===";

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum DomainError {
    #[error("public suffix list contains no rules")]
    EmptyRuleSet,
    #[error("invalid PSL rule {rule:?} on line {line}")]
    InvalidRule { line: usize, rule: String },
    #[error("invalid URL {0:?}")]
    InvalidUrl(String),
    #[error("unsupported URL scheme in {0:?}")]
    UnsupportedScheme(String),
    #[error("invalid host {0:?}")]
    InvalidHost(String),
    #[error("host {0:?} is itself a public suffix")]
    PublicSuffixHost(String),
}

/// Which sections of the list to load.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PslSections {
    #[default]
    All,
    IcannOnly,
}

/// Parsed Public Suffix List rules. Labels are lowercase ASCII (punycode).
#[derive(Debug, Clone)]
pub struct PslRuleSet {
    normal: HashSet<String>,
    /// Suffixes under a `*.` rule, stored without the wildcard label.
    wildcard: HashSet<String>,
    /// Exception rules, stored without the `!`.
    exception: HashSet<String>,
}

impl PslRuleSet {
    pub fn normal_rules(&self) -> usize {
        self.normal.len()
    }

    pub fn wildcard_rules(&self) -> usize {
        self.wildcard.len()
    }

    pub fn exception_rules(&self) -> usize {
        self.exception.len()
    }

    /// Number of trailing labels of `labels` that form the public suffix.
    fn suffix_len(&self, labels: &[&str]) -> usize {
        let n = labels.len();
        let suffix = |k: usize| labels[n - k..].join(".");
        let mut best = 1;
        for k in 1..=n {
            let candidate = suffix(k);
            if self.exception.contains(&candidate) {
                return k - 1;
            }
            if self.normal.contains(&candidate) {
                best = best.max(k);
            }
            if k >= 2 && self.wildcard.contains(&suffix(k - 1)) {
                best = best.max(k);
            }
        }
        best
    }

    /// Registrable domain of an already-extracted host name.
    pub fn registrable_domain(&self, host: &str) -> Result<String, DomainError> {
        let host = normalize_host(host)?;
        let labels: Vec<&str> = host.split('.').collect();
        let suffix = self.suffix_len(&labels);
        if labels.len() <= suffix {
            return Err(DomainError::PublicSuffixHost(host));
        }
        Ok(labels[labels.len() - suffix - 1..].join("."))
    }

    /// Public suffix of a host name.
    pub fn public_suffix(&self, host: &str) -> Result<String, DomainError> {
        let host = normalize_host(host)?;
        let labels: Vec<&str> = host.split('.').collect();
        let suffix = self.suffix_len(&labels).min(labels.len());
        Ok(labels[labels.len() - suffix..].join("."))
    }
}

fn to_ascii_domain(raw: &str) -> Option<String> {
    idna::domain_to_ascii(raw).ok().filter(|s| !s.is_empty())
}

fn normalize_host(host: &str) -> Result<String, DomainError> {
    let trimmed = host.strip_suffix('.').unwrap_or(host);
    if trimmed.is_empty() || trimmed.starts_with('.') || trimmed.contains("..") {
        return Err(DomainError::InvalidHost(host.to_string()));
    }
    to_ascii_domain(trimmed).ok_or_else(|| DomainError::InvalidHost(host.to_string()))
}

/// Parses the PSL plain-text format: `//` comments, blank lines, one rule
/// per line (only the first whitespace-delimited token counts).
pub fn parse_psl(text: &str) -> Result<PslRuleSet, DomainError> {
    parse_psl_sections(text, PslSections::All)
}

pub fn parse_psl_sections(text: &str, sections: PslSections) -> Result<PslRuleSet, DomainError> {
    let mut rules = PslRuleSet {
        normal: HashSet::new(),
        wildcard: HashSet::new(),
        exception: HashSet::new(),
    };
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.starts_with("//") {
            if sections == PslSections::IcannOnly && line.contains(PRIVATE_BEGIN) {
                break;
            }
            continue;
        }
        let Some(rule) = line.split_whitespace().next() else {
            continue;
        };
        let invalid = || DomainError::InvalidRule {
            line: idx + 1,
            rule: rule.to_string(),
        };
        if let Some(rest) = rule.strip_prefix('!') {
            rules.exception.insert(to_ascii_domain(rest).ok_or_else(invalid)?);
        } else if let Some(rest) = rule.strip_prefix("*.") {
            rules.wildcard.insert(to_ascii_domain(rest).ok_or_else(invalid)?);
        } else {
            rules.normal.insert(to_ascii_domain(rule).ok_or_else(invalid)?);
        }
    }
    if rules.normal.is_empty() && rules.wildcard.is_empty() && rules.exception.is_empty() {
        return Err(DomainError::EmptyRuleSet);
    }
    Ok(rules)
}

/// Source identity of a cited URL.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SourceDomain(String);

impl SourceDomain {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Wraps an already-resolved domain string.
    pub fn new(domain: impl Into<String>) -> Self {
        SourceDomain(domain.into())
    }
}

impl fmt::Display for SourceDomain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl AsRef<str> for SourceDomain {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

/// Resolves an absolute http(s) URL to its registrable domain. IP hosts
/// resolve to the address itself.
pub fn resolve_source(url: &str, rules: &PslRuleSet) -> Result<SourceDomain, DomainError> {
    let parsed = Url::parse(url.trim()).map_err(|_| DomainError::InvalidUrl(url.to_string()))?;
    if !matches!(parsed.scheme(), "http" | "https") {
        return Err(DomainError::UnsupportedScheme(url.to_string()));
    }
    match parsed.host() {
        Some(Host::Domain(host)) => {
            if let Ok(ip) = host.trim_end_matches('.').parse::<IpAddr>() {
                return Ok(SourceDomain(ip.to_string()));
            }
            rules.registrable_domain(host).map(SourceDomain)
        }
        Some(Host::Ipv4(ip)) => Ok(SourceDomain(ip.to_string())),
        Some(Host::Ipv6(ip)) => Ok(SourceDomain(ip.to_string())),
        None => Err(DomainError::InvalidUrl(url.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rules() -> PslRuleSet {
        parse_psl("com\nuk\nco.uk\npl\ngov.pl\n*.ck\n!www.ck\n// ===BEGIN PRIVATE DOMAINS===\nblogspot.com\n").unwrap()
    }

    #[test]
    fn parses_rule_kinds() {
        let r = parse_psl("com\n// c\nco.uk").unwrap();
        assert_eq!((r.normal_rules(), r.wildcard_rules(), r.exception_rules()), (2, 0, 0));
        let r = parse_psl("*.ck\n!www.ck").unwrap();
        assert_eq!((r.normal_rules(), r.wildcard_rules(), r.exception_rules()), (0, 1, 1));
    }

    #[test]
    fn empty_list_is_an_error() {
        assert_eq!(parse_psl("").unwrap_err(), DomainError::EmptyRuleSet);
        assert_eq!(parse_psl("// only\n\n").unwrap_err(), DomainError::EmptyRuleSet);
    }

    #[test]
    fn icann_only_drops_private_rules() {
        let text = "com\n// ===BEGIN PRIVATE DOMAINS===\nblogspot.com\n";
        let all = parse_psl_sections(text, PslSections::All).unwrap();
        let icann = parse_psl_sections(text, PslSections::IcannOnly).unwrap();
        assert_eq!(all.registrable_domain("a.b.blogspot.com").unwrap(), "b.blogspot.com");
        assert_eq!(icann.registrable_domain("a.b.blogspot.com").unwrap(), "blogspot.com");
    }

    #[test]
    fn resolves_urls() {
        let r = rules();
        assert_eq!(resolve_source("https://www.bbc.com/news/x", &r).unwrap().as_str(), "bbc.com");
        assert_eq!(resolve_source("https://a.b.gov.pl/x", &r).unwrap().as_str(), "b.gov.pl");
        assert_eq!(resolve_source("https://example.com", &r).unwrap().as_str(), "example.com");
        assert_eq!(resolve_source("http://news.bbc.co.uk/", &r).unwrap().as_str(), "bbc.co.uk");
    }

    #[test]
    fn case_port_and_trailing_dot_insensitive() {
        let r = rules();
        let a = resolve_source("HTTPS://WWW.X.COM./", &r).unwrap();
        let b = resolve_source("https://www.x.com/", &r).unwrap();
        let c = resolve_source("https://user:pw@www.x.com:8080/p?q", &r).unwrap();
        assert_eq!(a, b);
        assert_eq!(b, c);
    }

    #[test]
    fn ip_hosts_resolve_to_themselves() {
        let r = rules();
        assert_eq!(resolve_source("http://192.168.0.1/x", &r).unwrap().as_str(), "192.168.0.1");
        assert_eq!(resolve_source("http://[::1]/x", &r).unwrap().as_str(), "::1");
    }

    #[test]
    fn errors() {
        let r = rules();
        assert!(matches!(resolve_source("https://co.uk/", &r), Err(DomainError::PublicSuffixHost(_))));
        assert!(matches!(resolve_source("ftp://x.com/", &r), Err(DomainError::UnsupportedScheme(_))));
        assert!(matches!(resolve_source("not a url", &r), Err(DomainError::InvalidUrl(_))));
    }

    #[test]
    fn unknown_tld_uses_implicit_wildcard() {
        let r = rules();
        assert_eq!(r.registrable_domain("a.b.example.zz").unwrap(), "example.zz");
    }

    #[test]
    fn idn_hosts_are_punycoded() {
        let r = parse_psl("com\n").unwrap();
        assert_eq!(r.registrable_domain("www.bücher.com").unwrap(), "xn--bcher-kva.com");
        assert_eq!(
            resolve_source("https://www.bücher.com/", &r).unwrap().as_str(),
            "xn--bcher-kva.com"
        );
    }
}
