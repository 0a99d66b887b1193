//! Acceptance criteria of the pipeline, one report line per criterion.
//!
//! Runs with its own harness so the per-criterion lines are always printed;
//! the process fails if any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::BufRead;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use chrono::{DateTime, NaiveDate, Utc};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use sourcerank::calendar::DateWindow;
use sourcerank::config::PipelineConfig;
use sourcerank::corpus::{
    build_outbreak_query, build_timeline_query, load_category_graph, traverse_categories, CorpusSpec, Method,
};
use sourcerank::domain::{parse_psl, PslRuleSet, SourceDomain};
use sourcerank::http::OfflineFetch;
use sourcerank::ingest::{build_redirect_map, count_references, ingest_pageview_dumps, ArticleDaySnapshot};
use sourcerank::pipeline::{extract_article, Pipeline, RunOptions, Stage};
use sourcerank::score::{build_series, score_day, ModelId};
use sourcerank::wikitext::{
    expand_transclusions, extract_all, ExtractConfig, NonRefAllowlist, RevisionText, TemplateStore,
};

const CORE: &str = env!("CARGO_MANIFEST_DIR");

type Check = Result<String, String>;

type Criterion = (&'static str, fn() -> Check);

fn data(rel: &str) -> PathBuf {
    Path::new(CORE).join("tests").join(rel)
}

fn ts(s: &str) -> DateTime<Utc> {
    DateTime::parse_from_rfc3339(s).expect("valid timestamp").with_timezone(&Utc)
}

fn day(s: &str) -> NaiveDate {
    NaiveDate::parse_from_str(s, "%Y-%m-%d").expect("valid date")
}

fn subset_psl() -> PslRuleSet {
    parse_psl(&fs::read_to_string(data("data/public_suffix_list_subset.dat")).expect("psl subset")).expect("psl parses")
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// Scoring instances and the exact rational oracle.

const DOMAINS: usize = 10;

fn domain(k: usize) -> SourceDomain {
    SourceDomain::new(format!("source{k}.example"))
}

/// One article-day: C(i), C_s(i) per domain index, all and human views.
#[derive(Clone)]
struct ArticleDay {
    total: u64,
    counts: BTreeMap<usize, u64>,
    views_all: u64,
    views_human: u64,
}

fn random_article(rng: &mut ChaCha8Rng, even_views: bool) -> ArticleDay {
    let total = rng.random_range(0..=50u64);
    let mut counts = BTreeMap::new();
    if total > 0 {
        for k in 0..DOMAINS {
            if rng.random_bool(0.4) {
                counts.insert(k, rng.random_range(1..=total));
            }
        }
    }
    let mut views_all = rng.random_range(0..=1_000_000u64);
    if even_views {
        views_all -= views_all % 2;
    }
    let mut views_human = rng.random_range(0..=views_all);
    if even_views {
        views_human -= views_human % 2;
    }
    ArticleDay {
        total,
        counts,
        views_all,
        views_human,
    }
}

fn snapshot(i: usize, date: NaiveDate, a: &ArticleDay) -> ArticleDaySnapshot {
    ArticleDaySnapshot {
        article_id: format!("Article {i}"),
        date,
        total_refs: a.total,
        domain_counts: a.counts.iter().map(|(k, c)| (domain(*k), *c)).collect(),
        views_all: a.views_all,
        views_human: a.views_human,
    }
}

/// F, PR and PR2 of every cited domain, evaluated term by term in exact
/// rational arithmetic.
fn oracle(articles: &[ArticleDay]) -> BTreeMap<usize, [BigRational; 3]> {
    let mut out = BTreeMap::new();
    for k in 0..DOMAINS {
        let cited = articles.iter().any(|a| a.counts.get(&k).copied().unwrap_or(0) > 0);
        if !cited {
            continue;
        }
        let mut f = BigRational::zero();
        let mut pr = BigRational::zero();
        let mut pr2 = BigRational::zero();
        for a in articles {
            let c = BigInt::from(a.counts.get(&k).copied().unwrap_or(0));
            f += BigRational::from_integer(c.clone());
            if a.total > 0 {
                let denom = BigInt::from(a.total);
                pr += BigRational::new(BigInt::from(a.views_all) * &c, denom.clone());
                pr2 += BigRational::new(BigInt::from(a.views_human) * &c, denom);
            }
        }
        out.insert(k, [f, pr, pr2]);
    }
    out
}

/// |got - exact| / |exact|, computed exactly; zero when both are zero.
fn relative_error(got: f64, exact: &BigRational) -> Result<f64, String> {
    let got_r = BigRational::from_float(got).ok_or_else(|| format!("non-finite score {got}"))?;
    let diff = (got_r - exact).abs();
    if exact.is_zero() {
        return Ok(if diff.is_zero() { 0.0 } else { f64::INFINITY });
    }
    let rel = diff / exact.abs();
    Ok(ratio_to_f64(&rel))
}

fn ratio_to_f64(r: &BigRational) -> f64 {
    let scale = BigInt::from(10u64).pow(30);
    let scaled = (r * BigRational::from_integer(scale)).to_integer();
    scaled.to_string().parse::<f64>().unwrap_or(f64::INFINITY) / 1e30
}

fn criterion_exact_oracle() -> Check {
    let date = day("2020-03-15");
    let mut worst = 0.0f64;
    let mut elapsed = Duration::ZERO;
    for seed in 0..1000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(1..=20usize);
        let articles: Vec<ArticleDay> = (0..n).map(|_| random_article(&mut rng, false)).collect();
        let snaps: Vec<ArticleDaySnapshot> = articles.iter().enumerate().map(|(i, a)| snapshot(i, date, a)).collect();
        let expected = oracle(&articles);
        for (m, model) in [ModelId::F, ModelId::PR, ModelId::PR2].into_iter().enumerate() {
            let started = Instant::now();
            let got = score_day(&snaps, model);
            elapsed += started.elapsed();
            let got_domains: BTreeSet<&SourceDomain> = got.keys().collect();
            let want_domains: BTreeSet<SourceDomain> = expected.keys().map(|k| domain(*k)).collect();
            ensure(got_domains == want_domains.iter().collect(), || {
                format!("seed {seed} {model}: domain sets differ")
            })?;
            for (k, exact) in &expected {
                let value = got[&domain(*k)];
                let rel = relative_error(value, &exact[m])?;
                worst = worst.max(rel);
                ensure(rel <= 1e-9, || format!("seed {seed} {model} {}: relative error {rel:e}", domain(*k)))?;
            }
        }
    }
    ensure(elapsed < Duration::from_secs(5), || format!("scoring took {elapsed:?}"))?;
    Ok(format!("1000 instances, max relative error {worst:.1e}, scoring {:.3} s", elapsed.as_secs_f64()))
}

fn criterion_pr2_equals_pr() -> Check {
    let date = day("2020-03-15");
    for seed in 0..1000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(1..=20usize);
        let snaps: Vec<ArticleDaySnapshot> = (0..n)
            .map(|i| {
                let mut a = random_article(&mut rng, false);
                a.views_human = a.views_all;
                snapshot(i, date, &a)
            })
            .collect();
        let pr = score_day(&snaps, ModelId::PR);
        let pr2 = score_day(&snaps, ModelId::PR2);
        ensure(pr.len() == pr2.len(), || format!("seed {seed}: domain sets differ"))?;
        for (d, v) in &pr {
            ensure(v.to_bits() == pr2[d].to_bits(), || format!("seed {seed} {d}: {v} vs {}", pr2[d]))?;
        }
    }
    Ok("1000 instances, bitwise equal".to_string())
}

fn criterion_view_scaling() -> Check {
    let start = day("2020-03-20");
    let days: Vec<NaiveDate> = (0..24).map(|k| start + chrono::Days::new(k)).collect();
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(10_000 + seed);
        let n = rng.random_range(1..=20usize);
        let mut snaps = Vec::new();
        for d in &days {
            for i in 0..n {
                if rng.random_bool(0.8) {
                    snaps.push(snapshot(i, *d, &random_article(&mut rng, true)));
                }
            }
        }
        let base = build_series(&snaps, ModelId::PR);
        for k in [0.5f64, 2.0, 10.0] {
            let scaled_snaps: Vec<ArticleDaySnapshot> = snaps
                .iter()
                .map(|s| ArticleDaySnapshot {
                    views_all: (s.views_all as f64 * k) as u64,
                    views_human: (s.views_human as f64 * k) as u64,
                    ..s.clone()
                })
                .collect();
            let scaled = build_series(&scaled_snaps, ModelId::PR);
            ensure(base.len() == scaled.len(), || format!("seed {seed} k={k}: domain sets differ"))?;
            for (b, s) in base.iter().zip(&scaled) {
                ensure(b.domain == s.domain, || format!("seed {seed} k={k}: domain order differs"))?;
                for (date, v) in &b.daily {
                    let w = s.daily[date];
                    ensure(close(w, v * k), || format!("seed {seed} k={k} {} {date}: {w} vs {}", b.domain, v * k))?;
                }
                for (month, v) in &b.monthly {
                    let w = s.monthly[month];
                    ensure(close(w, v * k), || format!("seed {seed} k={k} {} {month}: {w} vs {}", b.domain, v * k))?;
                }
                ensure(b.monthly_rank == s.monthly_rank, || {
                    format!("seed {seed} k={k} {}: ranks changed", b.domain)
                })?;
            }
        }
    }
    Ok("100 instances x k in {0.5, 2, 10}: scores scale, monthly ranks unchanged".to_string())
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs())
}

// Extraction fixtures.

struct Case {
    name: &'static str,
    at: &'static str,
    text: &'static str,
    /// Counted occurrences: (inside a ref tag, ref name, URLs).
    expected: &'static [(bool, Option<&'static str>, &'static [&'static str])],
}

fn fixture_store() -> TemplateStore {
    TemplateStore::builder()
        .verbatim("Cite web")
        .verbatim("Cite news")
        .verbatim("Cite journal")
        .verbatim("Source box")
        .alias("Cite-web", "Cite web")
        .revision(
            "Covid data",
            ts("2020-01-01T00:00:00Z"),
            "<ref>{{cite web|url=https://ourworldindata.org/covid-cases|title=Cases}}</ref>",
        )
        .revision(
            "Covid chart",
            ts("2020-01-01T00:00:00Z"),
            "Chart {{Covid data}} and <ref>[https://data.who.int/dashboards/covid19 WHO]</ref><noinclude>[[Category:Charts]]</noinclude>",
        )
        .revision("Case table", ts("2020-02-01T00:00:00Z"), "<ref>[https://old.example.org/table Old]</ref>")
        .revision("Case table", ts("2020-04-01T00:00:00Z"), "<ref>[https://new.example.org/table New]</ref>")
        .revision("Ref source", ts("2020-01-01T00:00:00Z"), "<ref>{{cite news|url={{{1}}} |title=News}}</ref>")
        .build()
        .expect("fixture store builds")
}

const CASES: &[Case] = &[
    Case {
        name: "plain ref with citation template",
        at: "2020-03-15T00:00:00Z",
        text: "Text.<ref>{{cite web |url=https://www.who.int/news/item/1 |title=Update}}</ref>",
        expected: &[(true, None, &["https://www.who.int/news/item/1"])],
    },
    Case {
        name: "bracketed external link",
        at: "2020-03-15T00:00:00Z",
        text: "<ref>[https://www.nytimes.com/2020/03/01/a.html NYT]</ref>",
        expected: &[(true, None, &["https://www.nytimes.com/2020/03/01/a.html"])],
    },
    Case {
        name: "bare link with trailing period",
        at: "2020-03-15T00:00:00Z",
        text: "<ref>Retrieved from https://data.gov.uk/dataset/x.</ref>",
        expected: &[(true, None, &["https://data.gov.uk/dataset/x"])],
    },
    Case {
        name: "bare link in parentheses",
        at: "2020-03-15T00:00:00Z",
        text: "<ref>(https://www.statnews.com/2020/a)</ref>",
        expected: &[(true, None, &["https://www.statnews.com/2020/a"])],
    },
    Case {
        name: "ref without any URL",
        at: "2020-03-15T00:00:00Z",
        text: "<ref>Smith, J. (2020). ''Pandemics''. p. 4.</ref>",
        expected: &[(true, None, &[])],
    },
    Case {
        name: "named definition and two reuses",
        at: "2020-03-15T00:00:00Z",
        text: "A<ref name=\"bbc\">{{Cite news|url=https://www.bbc.co.uk/news/1|title=B}}</ref> B<ref name=\"bbc\" /> C<ref name=bbc/>",
        expected: &[
            (true, Some("bbc"), &["https://www.bbc.co.uk/news/1"]),
            (true, Some("bbc"), &["https://www.bbc.co.uk/news/1"]),
            (true, Some("bbc"), &["https://www.bbc.co.uk/news/1"]),
        ],
    },
    Case {
        name: "reuse before definition",
        at: "2020-03-15T00:00:00Z",
        text: "A<ref name=\"early\"/> B<ref name=\"early\">[https://example.org/e]</ref>",
        expected: &[
            (true, Some("early"), &["https://example.org/e"]),
            (true, Some("early"), &["https://example.org/e"]),
        ],
    },
    Case {
        name: "reuse of an undefined name",
        at: "2020-03-15T00:00:00Z",
        text: "A<ref name=\"ghost\"/>",
        expected: &[(true, Some("ghost"), &[])],
    },
    Case {
        name: "list-defined references",
        at: "2020-03-15T00:00:00Z",
        text: "A<ref name=\"ld1\"/> B<ref name=\"ld2\"/>\n== References ==\n<references>\n<ref name=\"ld1\">[https://www.ecdc.europa.eu/en/a ECDC]</ref>\n<ref name=\"ld2\">{{cite web|url=https://www.rki.de/b}}</ref>\n</references>",
        expected: &[
            (true, Some("ld1"), &["https://www.ecdc.europa.eu/en/a"]),
            (true, Some("ld2"), &["https://www.rki.de/b"]),
            (true, Some("ld1"), &["https://www.ecdc.europa.eu/en/a"]),
            (true, Some("ld2"), &["https://www.rki.de/b"]),
        ],
    },
    Case {
        name: "several links in one ref",
        at: "2020-03-15T00:00:00Z",
        text: "<ref>[https://a.example.com/1 A]; see also [https://b.example.org/2 B] and [https://a.example.com/1 again]</ref>",
        expected: &[(true, None, &["https://a.example.com/1", "https://b.example.org/2"])],
    },
    Case {
        name: "two citation templates in one ref",
        at: "2020-03-15T00:00:00Z",
        text: "<ref>{{cite web|url=https://www.cdc.gov/x}} {{cite journal|url=https://doi.org/10.1/abc}}</ref>",
        expected: &[(true, None, &["https://www.cdc.gov/x", "https://doi.org/10.1/abc"])],
    },
    Case {
        name: "archive URL is not a source",
        at: "2020-03-15T00:00:00Z",
        text: "<ref>{{cite web |url=https://www.cdc.gov/a |archive-url=https://web.archive.org/web/2020/https://www.cdc.gov/a |archive-date=1 March 2020}}</ref>",
        expected: &[(true, None, &["https://www.cdc.gov/a"])],
    },
    Case {
        name: "upper-case URL parameter",
        at: "2020-03-15T00:00:00Z",
        text: "<ref>{{cite news|URL= https://www.reuters.com/article/1 |title=R}}</ref>",
        expected: &[(true, None, &["https://www.reuters.com/article/1"])],
    },
    Case {
        name: "grouped footnote",
        at: "2020-03-15T00:00:00Z",
        text: "<ref group=\"note\">See [https://www.ons.gov.uk/x ONS].</ref>",
        expected: &[(true, None, &["https://www.ons.gov.uk/x"])],
    },
    Case {
        name: "citation template outside refs with URL",
        at: "2020-03-15T00:00:00Z",
        text: "== Further reading ==\n* {{Cite journal |url=https://www.nejm.org/doi/1 |title=T}}",
        expected: &[(false, None, &["https://www.nejm.org/doi/1"])],
    },
    Case {
        name: "citation template outside refs without URL",
        at: "2020-03-15T00:00:00Z",
        text: "* {{Cite book |title=Plague |year=1990}}",
        expected: &[],
    },
    Case {
        name: "alias of a citation template outside refs",
        at: "2020-03-15T00:00:00Z",
        text: "* {{Cite-web|url=https://www.gov.uk/guidance/x|title=G}}",
        expected: &[(false, None, &["https://www.gov.uk/guidance/x"])],
    },
    Case {
        name: "prose links outside refs",
        at: "2020-03-15T00:00:00Z",
        text: "See [https://www.example.com/ext site] or https://bare.example.net/ for more.",
        expected: &[],
    },
    Case {
        name: "ref inside a comment",
        at: "2020-03-15T00:00:00Z",
        text: "Text<!-- <ref>[https://hidden.example.com/]</ref> -->end",
        expected: &[],
    },
    Case {
        name: "ref inside nowiki",
        at: "2020-03-15T00:00:00Z",
        text: "<nowiki><ref>[https://nowiki.example.com/]</ref></nowiki>",
        expected: &[],
    },
    Case {
        name: "unclosed ref at end of text",
        at: "2020-03-15T00:00:00Z",
        text: "Text<ref>[https://unclosed.example.org/a]",
        expected: &[(true, None, &["https://unclosed.example.org/a"])],
    },
    Case {
        name: "unclosed ref followed by another ref",
        at: "2020-03-15T00:00:00Z",
        text: "<ref>[https://first.example.org/a] <ref>[https://second.example.org/b]</ref>",
        expected: &[
            (true, None, &["https://first.example.org/a"]),
            (true, None, &["https://second.example.org/b"]),
        ],
    },
    Case {
        name: "stray closing tag",
        at: "2020-03-15T00:00:00Z",
        text: "Text</ref> more <ref>[https://ok.example.org]</ref>",
        expected: &[(true, None, &["https://ok.example.org"])],
    },
    Case {
        name: "self-closing ref without a name",
        at: "2020-03-15T00:00:00Z",
        text: "Text<ref/> end",
        expected: &[],
    },
    Case {
        name: "transcluded ref",
        at: "2020-03-15T00:00:00Z",
        text: "Stats {{Covid data}}",
        expected: &[(true, None, &["https://ourworldindata.org/covid-cases"])],
    },
    Case {
        name: "nested transclusion",
        at: "2020-03-15T00:00:00Z",
        text: "{{Covid chart}}",
        expected: &[
            (true, None, &["https://ourworldindata.org/covid-cases"]),
            (true, None, &["https://data.who.int/dashboards/covid19"]),
        ],
    },
    Case {
        name: "date-matched transclusion before an update",
        at: "2020-03-31T23:59:59Z",
        text: "{{Case table}}",
        expected: &[(true, None, &["https://old.example.org/table"])],
    },
    Case {
        name: "date-matched transclusion after an update",
        at: "2020-04-01T00:00:00Z",
        text: "{{Case table}}",
        expected: &[(true, None, &["https://new.example.org/table"])],
    },
    Case {
        name: "transclusion with a parameter",
        at: "2020-03-15T00:00:00Z",
        text: "Report.{{Ref source|https://www.bbc.com/news/1}}",
        expected: &[(true, None, &["https://www.bbc.com/news/1"])],
    },
    Case {
        name: "allowlisted source outside refs",
        at: "2020-03-15T00:00:00Z",
        text: "{{Source box|source=https://ourworldindata.org/coronavirus|note=https://ignored.example.com/}}",
        expected: &[(false, None, &["https://ourworldindata.org/coronavirus"])],
    },
    Case {
        name: "allowlisted template inside a ref",
        at: "2020-03-15T00:00:00Z",
        text: "<ref>{{Source box|source=https://x.example.org/s}}</ref>",
        expected: &[(true, None, &["https://x.example.org/s"])],
    },
];

type Occ = (bool, Option<String>, Vec<String>);

fn run_case(case: &Case, store: &TemplateStore, config: &ExtractConfig, allowlist: &NonRefAllowlist, rules: &PslRuleSet) -> Result<(), String> {
    let rev = RevisionText::new("Fixture", "en", ts(case.at), case.text);
    let expansion = expand_transclusions(&rev, store, 5);
    let extraction = extract_all(&expansion.text, config, allowlist);
    let got: Vec<Occ> = extraction
        .occurrences
        .iter()
        .filter(|o| o.in_ref_tag || !o.urls.is_empty())
        .map(|o| (o.in_ref_tag, o.ref_name.clone(), o.urls.clone()))
        .collect();
    let want: Vec<Occ> = case
        .expected
        .iter()
        .map(|(r, n, u)| (*r, n.map(str::to_string), u.iter().map(|s| s.to_string()).collect()))
        .collect();
    let sorted = |mut v: Vec<Occ>| {
        v.sort();
        v
    };
    ensure(sorted(got.clone()) == sorted(want.clone()), || format!("{}: got {got:?}, want {want:?}", case.name))?;
    let counted = count_references(rev.timestamp, &extraction.occurrences, rules);
    ensure(counted.total_refs == want.len() as u64, || {
        format!("{}: C = {}, want {}", case.name, counted.total_refs, want.len())
    })
}

fn criterion_extraction_fixtures() -> Check {
    let store = fixture_store();
    let config = ExtractConfig::default();
    let allowlist = NonRefAllowlist::new([("Source box", "source")]);
    let rules = subset_psl();
    let failures: Vec<String> = CASES
        .iter()
        .filter_map(|c| run_case(c, &store, &config, &allowlist, &rules).err())
        .collect();
    ensure(CASES.len() >= 20, || format!("only {} fixtures", CASES.len()))?;
    ensure(failures.is_empty(), || failures.join("; "))?;
    Ok(format!("{} fixtures, exact occurrence match", CASES.len()))
}

fn criterion_date_matching() -> Check {
    let store = TemplateStore::builder()
        .revision("Daily cases", ts("2020-03-01T00:00:00Z"), "<ref>[https://first.example.org/r1]</ref>")
        .revision("Daily cases", ts("2020-04-01T12:00:00Z"), "<ref>[https://second.example.org/r2]</ref>")
        .revision("Daily cases", ts("2020-05-01T00:00:00Z"), "<ref>[https://third.example.org/r3]</ref>")
        .build()
        .map_err(|e| e.to_string())?;
    let probes: [(&str, Option<&str>); 5] = [
        ("2020-02-15T00:00:00Z", None),
        ("2020-03-15T00:00:00Z", Some("https://first.example.org/r1")),
        ("2020-04-01T12:00:00Z", Some("https://second.example.org/r2")),
        ("2020-04-20T00:00:00Z", Some("https://second.example.org/r2")),
        ("2020-06-01T00:00:00Z", Some("https://third.example.org/r3")),
    ];
    for (at, want) in probes {
        let rev = RevisionText::new("Probe", "en", ts(at), "Intro {{Daily cases}}");
        let text = expand_transclusions(&rev, &store, 5).text;
        let urls: Vec<String> = extract_all(&text, &ExtractConfig::default(), &NonRefAllowlist::default())
            .occurrences
            .into_iter()
            .flat_map(|o| o.urls)
            .collect();
        let want: Vec<String> = want.into_iter().map(str::to_string).collect();
        ensure(urls == want, || format!("probe {at}: got {urls:?}, want {want:?}"))?;
    }
    Ok("3 revisions, 5 probes".to_string())
}

// Suffix list, queries, categories, page views.

fn criterion_psl_vectors() -> Check {
    let rules = subset_psl();
    ensure(rules.wildcard_rules() > 0 && rules.exception_rules() > 0, || {
        "rule set lacks wildcard or exception rules".to_string()
    })?;
    let text = fs::read_to_string(data("data/psl_test_vectors.txt")).map_err(|e| e.to_string())?;
    let mut total = 0;
    let mut failures = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with("//")) {
        let (host, expected) = line.split_once('\t').ok_or_else(|| format!("bad vector line {line:?}"))?;
        total += 1;
        let want = match expected {
            "null" => None,
            e => Some(idna::domain_to_ascii(e).map_err(|_| format!("bad expectation {e}"))?),
        };
        let got = rules.registrable_domain(host).ok();
        if got != want {
            failures.push(format!("{host}: got {got:?}, want {want:?}"));
        }
    }
    ensure(total >= 50, || format!("only {total} vectors"))?;
    ensure(failures.is_empty(), || failures.join("; "))?;
    Ok(format!("{total}/{total} vectors"))
}

const OUTBREAK_LISTING: &str = "SELECT ?item WHERE { ?item p:P31 [ps:P31 wd:Q3241045; pq:P642 wd:Q84263196]. }";
const TIMELINE_LISTING: &str = "SELECT ?item WHERE { ?item p:P31 [ps:P31 wd:Q18340550; pq:P642 wd:Q81068910]. }";

fn criterion_sparql_queries() -> Check {
    let tokens = |s: &str| s.split_whitespace().map(str::to_string).collect::<Vec<_>>();
    for (built, listing) in [(build_outbreak_query(), OUTBREAK_LISTING), (build_timeline_query(), TIMELINE_LISTING)] {
        ensure(tokens(&built) == tokens(listing), || format!("query {built:?} differs from {listing:?}"))?;
    }
    Ok("2 queries token-equal".to_string())
}

fn criterion_category_traversal() -> Check {
    let open = |name: &str| fs::File::open(data(&format!("data/categories/{name}"))).map(std::io::BufReader::new);
    let graph = load_category_graph(open("page.sql").map_err(|e| e.to_string())?, open("categorylinks.sql").map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let roots: BTreeSet<String> = ["COVID-19 pandemic".to_string()].into();
    let exclusions: BTreeSet<String> = ["Deaths from COVID-19".to_string()].into();
    let expected: [&[&str]; 4] = [
        &["COVID-19 pandemic"],
        &["COVID-19 pandemic", "COVID-19 pandemic by country", "COVID-19 vaccine"],
        &["COVID-19 pandemic", "COVID-19 pandemic by country", "COVID-19 pandemic in Europe", "COVID-19 vaccine"],
        &[
            "COVID-19 pandemic",
            "COVID-19 pandemic by country",
            "COVID-19 pandemic in Europe",
            "COVID-19 pandemic in Italy",
            "COVID-19 vaccine",
        ],
    ];
    let mut previous: BTreeSet<String> = BTreeSet::new();
    for (depth, want) in expected.iter().enumerate() {
        let ids = traverse_categories(&graph, &roots, &exclusions, depth).map_err(|e| e.to_string())?;
        let got: BTreeSet<String> = graph.titles(&ids).into_iter().collect();
        let want: BTreeSet<String> = want.iter().map(|s| s.to_string()).collect();
        ensure(got == want, || format!("depth {depth}: got {got:?}, want {want:?}"))?;
        ensure(previous.is_subset(&got), || format!("depth {depth} is not a superset of depth {}", depth.max(1) - 1))?;
        previous = got;
    }
    let deep = traverse_categories(&graph, &roots, &exclusions, 50).map_err(|e| e.to_string())?;
    ensure(graph.titles(&deep).len() == 5, || "cycle changed the deep result".to_string())?;
    Ok("depths 0..3 nested, cycle terminates, excluded subtree absent".to_string())
}

/// Dump-form title to canonical title, written out by hand.
const VIEW_TITLES: &[(&str, &str)] = &[
    ("COVID-19_pandemic", "COVID-19 pandemic"),
    ("Coronavirus_pandemic", "COVID-19 pandemic"),
    ("2019-nCoV_outbreak", "COVID-19 pandemic"),
    ("COVID-19_pandemic_in_S%C3%A3o_Paulo", "COVID-19 pandemic in São Paulo"),
    ("COVID-19_pandemic_in_Italy", "COVID-19 pandemic in Italy"),
    ("Italy_coronavirus_outbreak", "COVID-19 pandemic in Italy"),
];

fn criterion_pageview_conservation() -> Check {
    let dir = data("data/pageviews");
    let mut files: Vec<PathBuf> = fs::read_dir(&dir)
        .map_err(|e| e.to_string())?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    files.sort();

    let mut oracle: BTreeMap<(String, NaiveDate), u64> = BTreeMap::new();
    for path in &files {
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        let date = day(&format!("{}-{}-{}", &name[10..14], &name[14..16], &name[16..18]));
        let reader: Box<dyn BufRead> = if name.ends_with(".gz") {
            Box::new(std::io::BufReader::new(flate2::read::GzDecoder::new(fs::File::open(path).map_err(|e| e.to_string())?)))
        } else {
            Box::new(std::io::BufReader::new(fs::File::open(path).map_err(|e| e.to_string())?))
        };
        for line in reader.lines() {
            let line = line.map_err(|e| e.to_string())?;
            let fields: Vec<&str> = line.split(' ').collect();
            if fields.len() != 4 || !(fields[0] == "en" || fields[0] == "en.m") {
                continue;
            }
            if let Some((_, canonical)) = VIEW_TITLES.iter().find(|(t, _)| *t == fields[1]) {
                let count: u64 = fields[2].parse().map_err(|_| format!("bad count in {line:?}"))?;
                *oracle.entry((canonical.to_string(), date)).or_insert(0) += count;
            }
        }
    }
    let hand: BTreeMap<(String, NaiveDate), u64> = [
        (("COVID-19 pandemic", "2020-03-15"), 3222),
        (("COVID-19 pandemic in São Paulo", "2020-03-15"), 43),
        (("COVID-19 pandemic in Italy", "2020-03-15"), 417),
        (("COVID-19 pandemic", "2020-03-16"), 1509),
        (("COVID-19 pandemic in Italy", "2020-03-16"), 300),
    ]
    .into_iter()
    .map(|((t, d), v)| ((t.to_string(), day(d)), v))
    .collect();
    ensure(oracle == hand, || format!("fixture oracle disagrees with hand totals: {oracle:?}"))?;

    let corpus = CorpusSpec::from_titles(
        "en",
        ["COVID-19 pandemic", "COVID-19 pandemic in São Paulo", "COVID-19 pandemic in Italy"],
        Method::Manual,
    );
    let redirects = build_redirect_map(
        &corpus,
        [
            ("Coronavirus pandemic", "COVID-19 pandemic"),
            ("2019-nCoV outbreak", "Coronavirus pandemic"),
            ("Italy coronavirus outbreak", "COVID-19 pandemic in Italy"),
        ],
    );
    let window = DateWindow::new(day("2020-03-01"), day("2020-03-31")).map_err(|e| e.to_string())?;
    let ingest = ingest_pageview_dumps(&files, "en", &redirects.map, &window).map_err(|e| e.to_string())?;
    let got: BTreeMap<(String, NaiveDate), u64> = ingest
        .records
        .iter()
        .filter(|r| r.views_all > 0)
        .map(|r| ((r.title.clone(), r.date), r.views_all))
        .collect();
    ensure(got == oracle, || format!("ingested {got:?}, want {oracle:?}"))?;
    let total: u64 = got.values().sum();
    let raw: u64 = oracle.values().sum();
    ensure(total == raw && ingest.tally.matched_views == raw, || format!("total {total} vs raw {raw}"))?;
    Ok(format!("{raw} views conserved, redirects folded onto canonical titles"))
}

// End to end.

fn criterion_end_to_end() -> Check {
    let fixture = data("fixtures/e2e");
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut config = PipelineConfig::load(&fixture.join("config.toml")).map_err(|e| e.to_string())?;
    config.output_dir = tmp.path().join("out");
    config.cache_dir = tmp.path().join("cache");
    config.offline = true;

    let started = Instant::now();
    let pipeline = Pipeline::with_fetch(config, RunOptions::default(), Arc::new(OfflineFetch)).map_err(|e| e.to_string())?;
    pipeline.run(&Stage::ALL).map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();

    let golden = fixture.join("golden");
    let mut compared = 0;
    for scope in ["en", "de", "all"] {
        for model in ["F", "PR", "PR2"] {
            let rel = format!("{scope}/{model}/rank_timeline.csv");
            let want = fs::read(golden.join(&rel)).map_err(|e| format!("{rel}: {e}"))?;
            let got = fs::read(tmp.path().join("out/reports").join(&rel)).map_err(|e| format!("{rel}: {e}"))?;
            ensure(got == want, || format!("{rel} differs from golden"))?;
            compared += 1;
        }
    }
    for model in ["F", "PR", "PR2"] {
        let read = |p: PathBuf| -> Result<serde_json::Value, String> {
            serde_json::from_slice(&fs::read(&p).map_err(|e| format!("{}: {e}", p.display()))?).map_err(|e| e.to_string())
        };
        let want = read(golden.join(format!("heatmap_{model}.json")))?;
        let got = read(tmp.path().join(format!("out/reports/all/{model}/language_heatmap.json")))?;
        ensure(got == want, || format!("heatmap {model} differs from golden"))?;
    }
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    Ok(format!("{compared} timelines byte-identical, 3 heatmaps equal, {:.2} s", elapsed.as_secs_f64()))
}

/// Roughly 100 KB of wikitext mixing prose, citations, reuses and transclusions.
fn synthetic_revision(article: usize, revision: usize) -> String {
    let mut text = String::with_capacity(110_000);
    let mut block = 0;
    while text.len() < 100_000 {
        let k = (article * 7919 + revision * 104_729 + block) % 997;
        text.push_str(&format!(
            "== Section {block} ==\nCases rose in region {k} during week {revision}, according to officials.\
<ref name=\"r{block}\">{{{{cite web |url=https://www.site{}.example.org/report/{k} |title=Report {k} |archive-url=https://web.archive.org/web/2020/{k}}}}}</ref> \
A later update followed.<ref name=\"r{block}\"/> Further details are given in [https://news{}.example.com/story/{k} a story].<ref>[https://news{}.example.com/story/{k} Story]</ref>\n\
{{{{Daily counts}}}} {{{{Infobox stub|value={k}}}}}\n",
            k % 40,
            k % 25,
            k % 25,
        ));
        block += 1;
    }
    text
}

fn criterion_throughput() -> Check {
    const ARTICLES: usize = 10;
    const PER_ARTICLE: usize = 100;
    let start = day("2020-03-01");
    let window = DateWindow::new(start, start + chrono::Days::new(PER_ARTICLE as u64 - 1)).map_err(|e| e.to_string())?;
    let store = TemplateStore::builder()
        .verbatim("Cite web")
        .revision("Daily counts", ts("2020-01-01T00:00:00Z"), "<ref>[https://ourworldindata.org/daily Daily]</ref>")
        .build()
        .map_err(|e| e.to_string())?;
    let revisions: Vec<Vec<RevisionText>> = (0..ARTICLES)
        .map(|a| {
            (0..PER_ARTICLE)
                .map(|r| {
                    let at = (start + chrono::Days::new(r as u64)).and_hms_opt(12, 0, 0).expect("valid time").and_utc();
                    RevisionText::new(format!("Article {a}"), "en", at, synthetic_revision(a, r))
                })
                .collect()
        })
        .collect();
    let bytes: usize = revisions.iter().flatten().map(|r| r.wikitext.len()).sum();
    let rules = subset_psl();
    let config = ExtractConfig::default();
    let allowlist = NonRefAllowlist::default();

    let started = Instant::now();
    let processed: usize = revisions
        .par_iter()
        .map(|revs| extract_article(revs, &window, &store, 5, &config, &allowlist, &rules).revisions.len())
        .sum();
    let elapsed = started.elapsed();
    ensure(processed == ARTICLES * PER_ARTICLE, || format!("processed {processed} revisions"))?;
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "{processed} revisions, {:.1} MB in {:.2} s",
        bytes as f64 / 1e6,
        elapsed.as_secs_f64()
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 11] = [
        ("scores match an exact rational oracle", criterion_exact_oracle),
        ("PR2 equals PR when human views equal all views", criterion_pr2_equals_pr),
        ("PR scales with views, ranks do not move", criterion_view_scaling),
        ("extraction fixtures", criterion_extraction_fixtures),
        ("date-matched template revisions", criterion_date_matching),
        ("public suffix test vectors", criterion_psl_vectors),
        ("identification queries", criterion_sparql_queries),
        ("category traversal", criterion_category_traversal),
        ("page-view conservation", criterion_pageview_conservation),
        ("end-to-end golden reports", criterion_end_to_end),
        ("extraction throughput", criterion_throughput),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("[PASS] {:>2} {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("[FAIL] {:>2} {name}: {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
