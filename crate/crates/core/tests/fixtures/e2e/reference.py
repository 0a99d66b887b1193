#!/usr/bin/env python3
"""Computes the expected reports of the end-to-end fixture from truth.json.

Works from the structured citation records only (no wikitext parsing, no
suffix-list lookups) and evaluates the scores in exact rational arithmetic.
Writes golden/<scope>/<model>/rank_timeline.csv and golden/heatmap_<model>.json.
"""

import json
from collections import defaultdict
from datetime import date, datetime, timedelta, timezone
from fractions import Fraction
from pathlib import Path

HERE = Path(__file__).resolve().parent
MODELS = ("F", "PR", "PR2")
TOP_K = 10
HEATMAP_TOP = 10
REF_KINDS = {
    "cite", "cite_archived", "link", "bare", "multi", "named", "reuse", "orphan", "nourl",
    "template", "template_alias", "template_nested",
}


def parse_ts(s):
    return datetime.strptime(s, "%Y-%m-%dT%H:%M:%SZ").replace(tzinfo=timezone.utc)


def box_domain(truth, at):
    current = None
    for rev in truth["source_box"]:
        if parse_ts(rev["timestamp"]) <= at:
            current = rev["domain"]
    return current


def revision_counts(truth, revision):
    """(C, {domain: C_s}) of one revision."""
    at = parse_ts(revision["timestamp"])
    total = 0
    per_domain = defaultdict(int)
    for c in revision["citations"]:
        kind = c["kind"]
        if kind.startswith("template"):
            domains = [box_domain(truth, at)]
        else:
            domains = c["domains"]
        if kind in REF_KINDS:
            total += 1
        elif kind == "further" and c["urls"]:
            total += 1
        else:
            continue
        for d in set(domains):
            per_domain[d] += 1
    return total, dict(per_domain)


def days(start, end):
    d = start
    while d <= end:
        yield d
        d += timedelta(days=1)


def snapshots(truth, lang):
    """{day: [(C, counts, views_all, views_human)]} for one language."""
    data = truth["languages"][lang]
    start = date.fromisoformat(truth["start"])
    end = date.fromisoformat(truth["end"])
    canonical = {a["title"]: a["title"] for a in data["articles"]}
    for a in data["articles"]:
        if a["redirect_from"]:
            canonical[a["redirect_from"]] = a["title"]
    views = defaultdict(lambda: [0, 0])
    for v in data["views"]:
        title = canonical.get(v["title"])
        if title is None:
            continue
        key = (title, date.fromisoformat(v["date"]))
        views[key][0] += v["all"]
        views[key][1] += v["human"]
    out = defaultdict(list)
    for a in data["articles"]:
        revs = sorted(a["revisions"], key=lambda r: r["timestamp"])
        for day in days(start, end):
            cutoff = datetime(day.year, day.month, day.day, 23, 59, 59, tzinfo=timezone.utc)
            defining = [r for r in revs if parse_ts(r["timestamp"]) <= cutoff]
            if not defining:
                continue
            total, counts = revision_counts(truth, defining[-1])
            va, vh = views[(a["title"], day)]
            out[day].append((total, counts, va, vh))
    return out


def daily_scores(snaps, model):
    """{domain: {day: Fraction}} with values only on days a domain is cited."""
    result = defaultdict(dict)
    for day, rows in snaps.items():
        scores = defaultdict(Fraction)
        cited = set()
        for total, counts, va, vh in rows:
            for d, c in counts.items():
                cited.add(d)
                if model == "F":
                    scores[d] += c
                elif total > 0:
                    v = va if model == "PR" else vh
                    scores[d] += Fraction(v * c, total)
        for d in cited:
            result[d][day] = scores[d]
    return result


def monthly(daily):
    """{domain: {(y, m): mean}} over the days with a value."""
    out = {}
    for d, series in daily.items():
        buckets = defaultdict(list)
        for day, v in series.items():
            buckets[(day.year, day.month)].append(v)
        out[d] = {m: sum(vs, Fraction(0)) / len(vs) for m, vs in buckets.items()}
    return out


def check_separation(a, b):
    if a != b and abs(a - b) <= Fraction(1, 10**9) * max(abs(a), abs(b)):
        raise SystemExit(f"near tie {float(a)} vs {float(b)}; choose another seed")


def ranks(means):
    """{month: {domain: rank}}."""
    by_month = defaultdict(dict)
    for d, ms in means.items():
        for m, v in ms.items():
            by_month[m][d] = v
    out = {}
    for m, scores in by_month.items():
        values = sorted(scores.values())
        for x, y in zip(values, values[1:]):
            check_separation(x, y)
        order = sorted(scores, key=lambda d: (-scores[d], d))
        out[m] = {d: i + 1 for i, d in enumerate(order)}
    return out


def fmt6(x):
    scaled = x * 10**6
    frac = scaled - (scaled.numerator // scaled.denominator)
    if abs(frac - Fraction(1, 2)) < Fraction(1, 10**6):
        raise SystemExit(f"score {float(x)} sits on a rounding boundary; choose another seed")
    q = round(scaled)
    sign = "-" if q < 0 else ""
    q = abs(q)
    return f"{sign}{q // 10**6}.{q % 10**6:06d}"


def timeline_csv(scope, model, means, month_ranks):
    rows = []
    for d, ms in means.items():
        if not any(month_ranks[m][d] <= TOP_K for m in ms):
            continue
        for m, v in ms.items():
            rows.append((m, month_ranks[m][d], d, v))
    rows.sort(key=lambda r: (r[0], r[1]))
    lines = ["language,month,model,domain,score,rank"]
    for m, r, d, v in rows:
        lines.append(f"{scope},{m[0]:04d}-{m[1]:02d},{model},{d},{fmt6(v)},{r}")
    return "\n".join(lines) + "\n"


def main():
    truth = json.loads((HERE / "truth.json").read_text(encoding="utf-8"))
    langs = sorted(truth["languages"])
    snaps = {lang: snapshots(truth, lang) for lang in langs}
    merged = defaultdict(list)
    for lang in langs:
        for day, rows in snaps[lang].items():
            merged[day].extend(rows)
    golden = HERE / "golden"
    for model in MODELS:
        per_lang_ranks = {}
        for scope, s in [(lang, snaps[lang]) for lang in langs] + [("all", merged)]:
            means = monthly(daily_scores(s, model))
            month_ranks = ranks(means)
            out = golden / scope / model
            out.mkdir(parents=True, exist_ok=True)
            (out / "rank_timeline.csv").write_text(timeline_csv(scope, model, means, month_ranks), encoding="utf-8")
            if scope != "all":
                per_lang_ranks[scope] = month_ranks
        selected = set()
        cells = defaultdict(dict)
        for lang, month_ranks in per_lang_ranks.items():
            by_domain = defaultdict(list)
            for m, rs in month_ranks.items():
                for d, r in rs.items():
                    by_domain[d].append(r)
            for d, rs in by_domain.items():
                if min(rs) <= HEATMAP_TOP:
                    selected.add(d)
                mean = Fraction(sum(rs), len(rs))
                cells[d][lang] = float(fmt6(mean))
        heatmap = {
            "model": model,
            "languages": langs,
            "rows": [
                {"domain": d, "average_rank": [cells[d].get(lang) for lang in langs]}
                for d in sorted(selected)
            ],
        }
        (golden / f"heatmap_{model}.json").write_text(json.dumps(heatmap, indent=2) + "\n", encoding="utf-8")


if __name__ == "__main__":
    main()
