"""Importance scores from pruning outcomes and their correlation with resource size."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .errors import ConfigError, DegenerateInputError
from .lslo import AdapterStack
from .pruning import GradualPruner, PruneGroup
from .rng import derive_rng

SCORE_COLUMNS = ("language", "side", "layer", "kind", "total", "pruned", "ratio", "score")


def importance_score(total: int, pruned: int, ratio: float) -> float:
    """pruned - ratio * total, rounded once from the exact value.

    Positive means the matrix gave up more than its share of entries.
    """
    if total < 0 or pruned < 0:
        raise ValueError("counts must be non-negative")
    if pruned > total:
        raise ValueError(f"pruned={pruned} exceeds total={total}")
    return float(pruned - Fraction(ratio) * total)


@dataclass(frozen=True)
class ScoreRow:
    language: str
    side: str
    layer: int
    kind: str
    total: int
    pruned: int
    ratio: float
    group_id: str

    @property
    def score(self) -> float:
        return importance_score(self.total, self.pruned, self.ratio)


@dataclass
class ScoreTable:
    rows: list[ScoreRow]
    grouping: str
    ratio: float
    meta: dict = field(default_factory=dict)

    def group_sums(self) -> dict[str, float]:
        """Per group: sum(pruned) - ratio * sum(total), exact before the final rounding."""
        pruned: dict[str, int] = {}
        total: dict[str, int] = {}
        for r in self.rows:
            pruned[r.group_id] = pruned.get(r.group_id, 0) + r.pruned
            total[r.group_id] = total.get(r.group_id, 0) + r.total
        return {g: float(pruned[g] - Fraction(self.ratio) * total[g]) for g in pruned}

    def language_means(self) -> dict[str, float]:
        """Mean score per language over every matrix (the layer-averaged heatmap value)."""
        acc: dict[str, list[float]] = {}
        for r in self.rows:
            acc.setdefault(r.language, []).append(r.score)
        return {k: math.fsum(v) / len(v) for k, v in sorted(acc.items())}

    def layer_means(self) -> dict[tuple[str, str, int], float]:
        """Mean over kinds per (language, side, layer)."""
        acc: dict[tuple[str, str, int], list[float]] = {}
        for r in self.rows:
            acc.setdefault((r.language, r.side, r.layer), []).append(r.score)
        return {k: math.fsum(v) / len(v) for k, v in sorted(acc.items())}

    def kind_means(self) -> dict[tuple[str, str], float]:
        """Mean over layers and sides per (language, kind)."""
        acc: dict[tuple[str, str], list[float]] = {}
        for r in self.rows:
            acc.setdefault((r.language, r.kind), []).append(r.score)
        return {k: math.fsum(v) / len(v) for k, v in sorted(acc.items())}

    def to_csv(self, header_comment: str | None = None) -> str:
        buf = io.StringIO()
        _comment(buf, header_comment)
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(SCORE_COLUMNS)
        for r in self.rows:
            w.writerow([r.language, r.side, r.layer, r.kind, r.total, r.pruned, repr(float(r.ratio)), repr(float(r.score))])
        return buf.getvalue()

    def heatmap_csv(self, header_comment: str | None = None) -> str:
        buf = io.StringIO()
        _comment(buf, header_comment)
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["language", "kind", "mean_score"])
        for (lang, kind), v in self.kind_means().items():
            w.writerow([lang, kind, repr(float(v))])
        return buf.getvalue()

    def layer_heatmap_csv(self, header_comment: str | None = None) -> str:
        buf = io.StringIO()
        _comment(buf, header_comment)
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["language", "side", "layer", "mean_score"])
        for (lang, side, layer), v in self.layer_means().items():
            w.writerow([lang, side, layer, repr(float(v))])
        return buf.getvalue()


def _comment(buf: io.StringIO, text: str | None) -> None:
    if text:
        for line in text.splitlines():
            buf.write(f"# {line}\n")


def score_table(stack: AdapterStack, plan: Sequence[PruneGroup], ratio: float, grouping: str) -> ScoreTable:
    """Read the current masks and score every member of every group."""
    rows = []
    for g in plan:
        for m in g.members:
            f = stack.adapters[m.site].factors(m.lang)
            pruned = int(np.count_nonzero(f.mask == 0))
            rows.append(ScoreRow(m.lang, m.site.side, m.site.layer, m.site.kind, int(f.B.size), pruned, ratio, g.group_id))
    rows.sort(key=lambda r: (r.language, r.side, r.layer, r.kind))
    return ScoreTable(rows, grouping, ratio)


def check_uniform_rank(stack: AdapterStack) -> int:
    ranks = {f.A.shape[0] for _, _, f in stack.items()}
    if len(ranks) != 1:
        raise ConfigError(f"estimation needs one shared rank across languages, found {sorted(ranks)}")
    return ranks.pop()


def estimate_from_pruner(pruner: GradualPruner) -> ScoreTable:
    """Scores from the masks left by the final epoch of a finished GPS run."""
    check_uniform_rank(pruner.stack)
    grouping = pruner.plan[0].grouping if pruner.plan else "per_matrix"
    return score_table(pruner.stack, pruner.plan, pruner.schedule.P, grouping)


def layerwise_cross_language_estimate(pruner: GradualPruner) -> ScoreTable:
    if any(g.grouping != "layerwise_cross_language" for g in pruner.plan):
        raise ConfigError("layerwise estimation needs layerwise_cross_language groups")
    return estimate_from_pruner(pruner)


def language_specific_estimate(pruner: GradualPruner) -> ScoreTable:
    if any(g.grouping != "language_specific_global" for g in pruner.plan):
        raise ConfigError("language-specific estimation needs language_specific_global groups")
    return estimate_from_pruner(pruner)


# ---------------------------------------------------------------------------
# correlation


def _pearson_r(x: np.ndarray, y: np.ndarray) -> float:
    dx = x - x.mean()
    dy = y - y.mean()
    r = float((dx @ dy) / math.sqrt(float(dx @ dx) * float(dy @ dy)))
    return min(1.0, max(-1.0, r))


def pearson_correlation(xs: Sequence[float], ys: Sequence[float], permutations: int = 10_000, seed: int = 0) -> tuple[float, float]:
    """Pearson r with a two-sided permutation p-value, p = (k + 1) / (N + 1).

    ``k`` counts permutations of ``ys`` whose |r| reaches the observed |r|
    (with a 1e-12 slack so exact ties count).
    """
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("xs and ys must be 1-d sequences of equal length")
    if len(x) < 3:
        raise DegenerateInputError("correlation needs at least 3 points")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise DegenerateInputError("correlation inputs must be finite")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise DegenerateInputError("correlation input has zero variance")
    r = _pearson_r(x, y)
    rng = derive_rng(seed, "pearson")
    dx = x - x.mean()
    dy = y - y.mean()
    norm = math.sqrt(float(dx @ dx) * float(dy @ dy))
    perms = np.argsort(rng.random((permutations, len(y))), axis=1)
    r_perm = (dy[perms] @ dx) / norm
    hits = int(np.count_nonzero(np.abs(r_perm) >= abs(r) - 1e-12))
    return r, (hits + 1) / (permutations + 1)


def resource_correlation(table: ScoreTable, corpus_sizes: dict[str, int], seed: int = 0) -> tuple[float, float]:
    """Correlate log10(corpus size) with each language's mean score."""
    means = table.language_means()
    langs = sorted(means)
    return pearson_correlation([math.log10(corpus_sizes[l]) for l in langs], [means[l] for l in langs], seed=seed)
