"""Unstructured L1 pruning of LoRA ``B`` matrices under a gradual schedule."""

from __future__ import annotations

import csv
import io
import math
from fractions import Fraction
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from .errors import ConfigError, PlanError
from .lslo import AdapterStack, LoraFactors
from .model import LsloSite

GROUPINGS = ("per_matrix", "layerwise_cross_language", "language_specific_global")


@dataclass(frozen=True)
class PruneSchedule:
    P: float
    E: int = 2
    k: int = 8
    T: int = 15

    def __post_init__(self):
        if not (0.0 <= self.P < 1.0):
            raise ConfigError(f"pruning ratio P must lie in [0, 1), got {self.P}")
        if self.E < 1 or self.k < 1 or self.T < 1:
            raise ConfigError("E, k and T must be positive")
        if self.E + self.k > self.T:
            raise ConfigError(f"E + k = {self.E + self.k} exceeds T = {self.T}: no training left after pruning")


def schedule_ratio(e: int, sched: PruneSchedule) -> float:
    """Cubic ramp: 0 up to epoch E, then P - P(1 - (e-E)/k)^3, then P after E+k."""
    if not (1 <= e <= sched.T):
        raise ValueError(f"epoch {e} outside 1..{sched.T}")
    if e <= sched.E:
        return 0.0
    if e <= sched.E + sched.k:
        return sched.P - sched.P * (1.0 - (e - sched.E) / sched.k) ** 3
    return sched.P


@dataclass(frozen=True)
class Member:
    site: LsloSite
    lang: str


@dataclass
class PruneGroup:
    group_id: str
    members: list[Member]
    grouping: str = "per_matrix"


def _factors(stack: AdapterStack, m: Member) -> LoraFactors:
    return stack.adapters[m.site].factors(m.lang)


def l1_prune_group(stack: AdapterStack, group: PruneGroup, ratio: float) -> int:
    """Mask the floor(ratio * N) smallest-magnitude entries across all members jointly.

    The floor is taken on the exact rational value of ``ratio * N``.

    Already-masked entries rank first, so sparsity only grows while the ratio
    does. Returns the number of masked entries.
    """
    if not (0.0 <= ratio <= 1.0):
        raise ValueError(f"ratio must lie in [0, 1], got {ratio}")
    facs = [_factors(stack, m) for m in group.members]
    sizes = [f.B.size for f in facs]
    total = int(np.sum(sizes))
    n_prune = math.floor(Fraction(ratio) * total)  # exact: a rounded product could overshoot an integer
    mags = np.concatenate([np.abs(f.B.data).reshape(-1) for f in facs]) if facs else np.zeros(0)
    was_masked = np.concatenate([(f.mask == 0).reshape(-1) for f in facs]) if facs else np.zeros(0, bool)
    # previously masked entries first, then ascending magnitude; stable for ties
    order = np.lexsort((mags, ~was_masked))
    flat_mask = np.ones(total)
    flat_mask[order[:n_prune]] = 0.0
    offset = 0
    for f, n in zip(facs, sizes):
        f.mask = flat_mask[offset : offset + n].reshape(f.B.shape).copy()
        f.B.data[...] = np.where(f.mask > 0, f.B.data, 0.0)
        offset += n
    return n_prune


def make_plan(
    stack: AdapterStack,
    grouping: str = "per_matrix",
    scope: Iterable[str] | None = None,
) -> list[PruneGroup]:
    """Group B matrices; languages outside ``scope`` (resource types) are left out."""
    if grouping not in GROUPINGS:
        raise ConfigError(f"unknown grouping {grouping!r}; expected one of {GROUPINGS}")
    scope = set(scope) if scope is not None else None
    members = [
        Member(site, code)
        for site, code, _ in stack.items()
        if scope is None or stack.langs[code].resource_type in scope
    ]
    groups: dict[str, list[Member]] = {}
    for m in members:
        if grouping == "per_matrix":
            gid = f"{m.site.key}/{m.lang}"
        elif grouping == "layerwise_cross_language":
            gid = f"{'enc' if m.site.side == 'encoder' else 'dec'}.{m.site.layer}"
        else:
            gid = m.lang
        groups.setdefault(gid, []).append(m)
    return [PruneGroup(gid, ms, grouping) for gid, ms in groups.items()]


def check_plan(plan: list[PruneGroup]) -> None:
    seen: set[Member] = set()
    for g in plan:
        for m in g.members:
            if m in seen:
                raise PlanError(f"{m.site.key}/{m.lang} appears in more than one pruning group")
            seen.add(m)


@dataclass
class PruneLogRow:
    epoch: int
    group_id: str
    target_ratio: float
    zeroed: int
    total: int


@dataclass
class GradualPruner:
    """Recomputes masks at the start of each epoch from the schedule."""

    stack: AdapterStack
    schedule: PruneSchedule
    plan: list[PruneGroup]
    log: list[PruneLogRow] = field(default_factory=list)

    def __post_init__(self):
        check_plan(self.plan)

    def on_epoch_start(self, epoch: int) -> list[PruneLogRow]:
        ratio = schedule_ratio(epoch, self.schedule)
        rows = []
        for g in self.plan:
            zeroed = l1_prune_group(self.stack, g, ratio)
            total = int(np.sum([_factors(self.stack, m).B.size for m in g.members]))
            rows.append(PruneLogRow(epoch, g.group_id, ratio, zeroed, total))
        self.log.extend(rows)
        return rows


def apply_masks(stack: AdapterStack) -> None:
    stack.reapply_masks()


def run_schedule(
    stack: AdapterStack,
    sched: PruneSchedule,
    plan: list[PruneGroup],
    train_epoch: Callable[[int], None] | None = None,
) -> list[PruneLogRow]:
    """Drive T epochs: prune at each epoch start, then run ``train_epoch(e)`` if given."""
    pruner = GradualPruner(stack, sched, plan)
    for e in range(1, sched.T + 1):
        pruner.on_epoch_start(e)
        if train_epoch is not None:
            train_epoch(e)
    return pruner.log


def prune_log_csv(rows: Iterable[PruneLogRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "group_id", "target_ratio", "zeroed", "total"])
    for r in rows:
        w.writerow([r.epoch, r.group_id, repr(float(r.target_ratio)), r.zeroed, r.total])
    return buf.getvalue()
