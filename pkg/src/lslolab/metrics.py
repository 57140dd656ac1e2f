"""Corpus BLEU over token ids and the bucketed report layout."""

from __future__ import annotations

import csv
import io
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .data import bucket_of
from .lslo import RESOURCE_ABBREV, RESOURCE_TYPES, LanguageSpec


def _ngram_counts(seq: Sequence[int], n: int) -> Counter:
    return Counter(tuple(seq[i : i + n]) for i in range(len(seq) - n + 1))


def ngram_stats(candidates, references, max_n: int = 4) -> tuple[list[int], list[int], int, int]:
    """Clipped matches and candidate totals per order, plus the two corpus lengths."""
    if len(candidates) != len(references):
        raise ValueError(f"{len(candidates)} candidates but {len(references)} references")
    if not candidates:
        raise ValueError("bleu needs at least one sentence pair")
    matches = [0] * max_n
    totals = [0] * max_n
    c_len = r_len = 0
    for cand, ref in zip(candidates, references):
        cand, ref = list(cand), list(ref)
        c_len += len(cand)
        r_len += len(ref)
        for n in range(1, max_n + 1):
            cc = _ngram_counts(cand, n)
            rc = _ngram_counts(ref, n)
            matches[n - 1] += sum(min(c, rc[g]) for g, c in cc.items())
            totals[n - 1] += max(len(cand) - n + 1, 0)
    return matches, totals, c_len, r_len


def bleu(candidates, references, max_n: int = 4) -> float:
    """Corpus BLEU in [0, 100].

    When any order n >= 2 has zero matches, all orders n >= 2 use add-one
    smoothed precisions (m + 1) / (t + 1). Zero unigram matches give 0.
    """
    matches, totals, c_len, r_len = ngram_stats(candidates, references, max_n)
    if c_len == 0 or matches[0] == 0:
        return 0.0
    smooth = any(m == 0 for m in matches[1:])
    log_p = math.log(matches[0] / totals[0])
    for m, t in zip(matches[1:], totals[1:]):
        log_p += math.log((m + 1) / (t + 1)) if smooth else math.log(m / t)
    bp = 1.0 if c_len > r_len else math.exp(1.0 - r_len / c_len)
    return 100.0 * bp * math.exp(log_p / max_n)


@dataclass
class BleuReport:
    directions: dict[str, float]
    buckets: dict[str, float]
    avg_buckets: float
    avg_directions: float
    bucket_order: list[str] = field(default_factory=list)


def bucket_columns(langs: Sequence[LanguageSpec]) -> list[str]:
    present = [t for t in RESOURCE_TYPES if any(l.resource_type == t for l in langs)]
    return [f"{RESOURCE_ABBREV[a]}2{RESOURCE_ABBREV[b]}" for a in present for b in present]


def bucket_report(scores: Mapping[tuple[str, str], float], langs: Sequence[LanguageSpec]) -> BleuReport:
    by_code = {l.code: l for l in langs}
    grouped: dict[str, list[float]] = {}
    for (s, t), v in sorted(scores.items()):
        grouped.setdefault(bucket_of(by_code[s], by_code[t]), []).append(v)
    order = [b for b in bucket_columns(langs) if b in grouped]
    buckets = {b: math.fsum(grouped[b]) / len(grouped[b]) for b in order}
    avg_b = math.fsum(buckets.values()) / len(buckets) if buckets else 0.0
    avg_d = math.fsum(scores.values()) / len(scores) if scores else 0.0
    dirs = {f"{s}-{t}": v for (s, t), v in sorted(scores.items())}
    return BleuReport(dirs, buckets, avg_b, avg_d, order)


def _fmt(x: float) -> str:
    return f"{x:.2f}"


def report_csv(rows: Sequence[tuple[str, str, BleuReport]], header_comment: str | None = None) -> str:
    """Table layout: method, #Params, one column per bucket, AVG (over buckets), AVG_directions."""
    columns: list[str] = []
    for _, _, rep in rows:
        for b in rep.bucket_order:
            if b not in columns:
                columns.append(b)
    buf = io.StringIO()
    if header_comment:
        for line in header_comment.splitlines():
            buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "#Params", *columns, "AVG", "AVG_directions"])
    for method, params, rep in rows:
        cells = [_fmt(rep.buckets[c]) if c in rep.buckets else "" for c in columns]
        w.writerow([method, params, *cells, _fmt(rep.avg_buckets), _fmt(rep.avg_directions)])
    return buf.getvalue()


def report_json(method: str, params: str, rep: BleuReport) -> str:
    doc = {
        "method": method,
        "params": params,
        "directions": rep.directions,
        "buckets": rep.buckets,
        "AVG_buckets": rep.avg_buckets,
        "AVG_directions": rep.avg_directions,
    }
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def format_params(n: int | None) -> str:
    if n is None:
        return "-"
    if n >= 1_000_000:
        return f"{n / 1e6:.1f}M"
    if n >= 10_000:
        return f"{n / 1e3:.1f}K"
    return str(n)
