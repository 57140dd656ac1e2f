"""Language-specific LoRA: per-language low-rank factors with hard routing.

A site's update for language ``l`` is ``B_l A_l x`` with no scaling factor.
Which language a site listens to is decided per (side, layer) either by a
fixed :class:`IndexStrategy` or, during weight learning, by a softmax mixture
of the source- and target-indexed branches shared across the layer.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping

import numpy as np

from . import numcore as nc
from .errors import ConfigError, RoutingError
from .model import ATTN_KINDS, FC_KINDS, LsloSite, ModelConfig, Route, enumerate_sites, site_dims
from .numcore import Tensor
from .rng import derive_rng

RESOURCE_TYPES = ("High", "Medium", "Low", "VeryLow")
RESOURCE_ABBREV = {"High": "H", "Medium": "M", "Low": "L", "VeryLow": "V"}
PLACEMENTS = ("all", "only_fc", "only_attn")


@dataclass(frozen=True)
class LanguageSpec:
    code: str
    resource_type: str
    corpus_size: int
    rank: int = 8

    def __post_init__(self):
        if self.resource_type not in RESOURCE_TYPES:
            raise ConfigError(f"language {self.code!r}: unknown resource type {self.resource_type!r}")
        if self.corpus_size < 0:
            raise ConfigError(f"language {self.code!r}: corpus_size must be >= 0")
        if self.rank < 1:
            raise ConfigError(f"language {self.code!r}: rank must be >= 1")


def check_unique(langs: Iterable[LanguageSpec]) -> list[LanguageSpec]:
    langs = list(langs)
    codes = [lang.code for lang in langs]
    if len(set(codes)) != len(codes):
        raise ConfigError(f"duplicate language codes in {codes}")
    return langs


# ---------------------------------------------------------------------------
# rank policies


def parse_rank_policy(text: str) -> dict[str, int]:
    """``"rH;rM;rV"`` or ``"rH;rM;rL;rV"`` to a resource-type -> rank map."""
    parts = [p.strip() for p in str(text).split(";")]
    try:
        ranks = [int(p) for p in parts]
    except ValueError:
        raise ConfigError(f"rank policy {text!r} must be ';'-separated integers") from None
    if len(ranks) == 3:
        types = ("High", "Medium", "VeryLow")
    elif len(ranks) == 4:
        types = RESOURCE_TYPES
    else:
        raise ConfigError(f"rank policy {text!r} needs 3 or 4 entries")
    if min(ranks) < 1:
        raise ConfigError(f"rank policy {text!r} has a rank below 1")
    return dict(zip(types, ranks))


def format_rank_policy(policy: Mapping[str, int]) -> str:
    return ";".join(str(policy[t]) for t in RESOURCE_TYPES if t in policy)


def apply_rank_policy(langs: Iterable[LanguageSpec], policy: Mapping[str, int]) -> list[LanguageSpec]:
    out = []
    for lang in langs:
        if lang.resource_type not in policy:
            raise ConfigError(
                f"rank policy {format_rank_policy(policy)!r} has no rank for resource type "
                f"{lang.resource_type} (language {lang.code!r})"
            )
        out.append(replace(lang, rank=policy[lang.resource_type]))
    return out


# ---------------------------------------------------------------------------
# adapters


@dataclass
class LoraFactors:
    A: Tensor  # r x k
    B: Tensor  # d x r
    mask: np.ndarray  # d x r, {0, 1}

    @property
    def dense(self) -> bool:
        return bool(self.mask.all())

    def effective_B(self) -> Tensor:
        if self.dense:
            return self.B
        return nc.mul(self.B, self.mask)


@dataclass
class LsloAdapter:
    site: LsloSite
    d: int
    k: int
    entries: dict[str, LoraFactors]

    def factors(self, lang: str) -> LoraFactors:
        try:
            return self.entries[lang]
        except KeyError:
            raise RoutingError(f"site {self.site.key} has no adapter for language {lang!r}") from None


def new_adapter(site: LsloSite, d: int, k: int, langs: Iterable[LanguageSpec], rng: np.random.Generator) -> LsloAdapter:
    entries = {}
    for lang in langs:
        r = lang.rank
        A = Tensor(rng.normal(0.0, 1.0 / math.sqrt(r), size=(r, k)), requires_grad=True)
        B = Tensor(np.zeros((d, r)), requires_grad=True)
        entries[lang.code] = LoraFactors(A, B, np.ones((d, r)))
    return LsloAdapter(site, d, k, entries)


def lslo_forward(adapter: LsloAdapter, x: Tensor, lang: str) -> Tensor:
    f = adapter.factors(lang)
    return nc.linear(nc.linear(x, f.A), f.effective_B())


# ---------------------------------------------------------------------------
# index strategy and weight learning


@dataclass
class IndexStrategy:
    """Per (side, layer): ``"source"`` or ``"target"`` indexed."""

    choice: dict[tuple[str, int], str]

    def __post_init__(self):
        bad = {v for v in self.choice.values()} - {"source", "target"}
        if bad:
            raise ConfigError(f"index strategy values must be source/target, got {sorted(bad)}")

    @classmethod
    def uniform(cls, num_layers: int, encoder: str, decoder: str = "target") -> "IndexStrategy":
        choice = {("encoder", i): encoder for i in range(num_layers)}
        choice.update({("decoder", i): decoder for i in range(num_layers)})
        return cls(choice)

    def language(self, site: LsloSite, route: Route) -> str:
        try:
            which = self.choice[(site.side, site.layer)]
        except KeyError:
            raise ConfigError(f"index strategy has no entry for {site.side} layer {site.layer}") from None
        return route.src if which == "source" else route.tgt

    def covers(self, num_layers: int) -> bool:
        return all((s, i) in self.choice for s in ("encoder", "decoder") for i in range(num_layers))

    def to_json(self) -> str:
        rows = [{"side": s, "layer": i, "index": v} for (s, i), v in sorted(self.choice.items())]
        return json.dumps({"strategy": rows}, indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "IndexStrategy":
        rows = json.loads(text)["strategy"]
        return cls({(r["side"], int(r["layer"])): r["index"] for r in rows})


@dataclass
class WeightLearningState:
    """Raw (u_src, u_tgt) logits, one trainable pair per (side, layer)."""

    raw: dict[tuple[str, int], Tensor] = field(default_factory=dict)

    @classmethod
    def zeros(cls, num_layers: int) -> "WeightLearningState":
        raw = {
            (side, i): Tensor(np.zeros(2), requires_grad=True, name=f"wl.{side}.{i}")
            for side in ("encoder", "decoder")
            for i in range(num_layers)
        }
        return cls(raw)

    def weights_tensor(self, side: str, layer: int) -> Tensor:
        return nc.softmax(self.raw[(side, layer)])

    def weights(self, side: str, layer: int) -> tuple[float, float]:
        with nc.no_grad():
            w = self.weights_tensor(side, layer).data
        return float(w[0]), float(w[1])

    def parameters(self) -> list[Tensor]:
        return [self.raw[k] for k in sorted(self.raw)]

    def table(self) -> list[tuple[str, int, float, float]]:
        return [(s, i, *self.weights(s, i)) for (s, i) in sorted(self.raw)]


def wl_forward(adapter: LsloAdapter, x: Tensor, src: str, tgt: str, wl: WeightLearningState) -> Tensor:
    adapter.factors(src)
    adapter.factors(tgt)
    if src == tgt:
        return lslo_forward(adapter, x, src)
    w = wl.weights_tensor(adapter.site.side, adapter.site.layer)
    return nc.add(
        nc.mul(w[0], lslo_forward(adapter, x, src)),
        nc.mul(w[1], lslo_forward(adapter, x, tgt)),
    )


def resolve_index_strategy(wl: WeightLearningState) -> IndexStrategy:
    """Pick the branch with the larger weight per layer; exact ties go to target."""
    choice = {}
    for key in wl.raw:
        w_src, w_tgt = wl.weights(*key)
        choice[key] = "source" if w_src > w_tgt else "target"
    return IndexStrategy(choice)


# ---------------------------------------------------------------------------
# stack


def trainable_param_count(sites: Iterable[tuple[int, int]], langs: Iterable[LanguageSpec]) -> int:
    """Sum over sites of sum over languages of d*r + r*k; ``sites`` yields (d, k)."""
    langs = list(langs)
    return sum(sum(d * lang.rank + lang.rank * k for lang in langs) for d, k in sites)


def placement_filter(placement: str):
    if placement == "all":
        return lambda site: True
    if placement == "only_fc":
        return lambda site: site.kind in FC_KINDS
    if placement == "only_attn":
        return lambda site: site.kind in ATTN_KINDS
    raise ConfigError(f"unknown placement {placement!r}; expected one of {PLACEMENTS}")


class AdapterStack:
    """All adapters of one run plus the routing rule that drives them."""

    def __init__(
        self,
        config: ModelConfig,
        adapters: dict[LsloSite, LsloAdapter],
        langs: list[LanguageSpec],
        strategy: IndexStrategy | None = None,
        wl: WeightLearningState | None = None,
        placement: str = "all",
    ):
        self.config = config
        self.adapters = adapters
        self.langs = {lang.code: lang for lang in langs}
        self.placement = placement
        self.wl = wl
        self.strategy = strategy or IndexStrategy.uniform(config.num_layers, "source", "target")

    def delta(self, site: LsloSite, x: Tensor, route: Route | None) -> Tensor | None:
        adapter = self.adapters.get(site)
        if adapter is None:
            return None
        if route is None:
            raise RoutingError(f"site {site.key} needs a (src, tgt) route")
        if self.wl is not None:
            return wl_forward(adapter, x, route.src, route.tgt, self.wl)
        return lslo_forward(adapter, x, self.strategy.language(site, route))

    def sites(self) -> list[LsloSite]:
        return sorted(self.adapters)

    def items(self):
        """(site, language code, factors) for every adapter entry, in a fixed order."""
        for site in self.sites():
            for code, f in sorted(self.adapters[site].entries.items()):
                yield site, code, f

    def parameters(self) -> list[Tensor]:
        params = []
        for _, _, f in self.items():
            params += [f.A, f.B]
        if self.wl is not None:
            params += self.wl.parameters()
        return params

    def trainable_count(self) -> int:
        dims = [(a.d, a.k) for a in (self.adapters[s] for s in self.sites())]
        extra = sum(t.size for t in self.wl.parameters()) if self.wl is not None else 0
        return trainable_param_count(dims, self.langs.values()) + extra

    def reapply_masks(self) -> None:
        """Force masked entries of every B back to exactly zero."""
        for _, _, f in self.items():
            if not f.dense:
                f.B.data[...] = np.where(f.mask > 0, f.B.data, 0.0)

    def mask_bytes(self) -> bytes:
        return b"".join(f.mask.tobytes() for _, _, f in self.items())


def build_adapter_stack(
    config: ModelConfig,
    langs: Iterable[LanguageSpec],
    policy: Mapping[str, int] | str | None = None,
    placement: str = "all",
    *,
    seed: int = 0,
    strategy: IndexStrategy | None = None,
    weight_learning: bool = False,
    sites: Iterable[LsloSite] | None = None,
) -> AdapterStack:
    langs = check_unique(langs)
    if isinstance(policy, str):
        policy = parse_rank_policy(policy)
    if policy is not None:
        langs = apply_rank_policy(langs, policy)
    keep = placement_filter(placement)
    chosen = [s for s in (sites if sites is not None else enumerate_sites(config)) if keep(s)]
    if strategy is not None and not strategy.covers(config.num_layers):
        raise ConfigError("index strategy does not cover every layer of both sides")
    adapters = {}
    for site in chosen:
        d, k = site_dims(config, site)
        adapters[site] = new_adapter(site, d, k, langs, derive_rng(seed, "adapter", site.key))
    wl = WeightLearningState.zeros(config.num_layers) if weight_learning else None
    return AdapterStack(config, adapters, langs, strategy=strategy, wl=wl, placement=placement)


class PlainLora:
    """Reference single-language LoRA: h = W x + B A x, no routing and no masks."""

    def __init__(self, factors: dict[LsloSite, tuple[Tensor, Tensor]]):
        self.factors = factors

    def delta(self, site: LsloSite, x: Tensor, route=None) -> Tensor | None:
        pair = self.factors.get(site)
        if pair is None:
            return None
        A, B = pair
        return nc.linear(nc.linear(x, A), B)
