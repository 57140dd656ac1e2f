"""Desk-scale experiments: the 4-language reproduction and the estimation sweep.

Both run on one CPU core in about a minute per seed with the defaults below.
"""

from __future__ import annotations

import copy
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import CorpusSpec, generate_corpus, heldout_pairs
from .estimation import layerwise_cross_language_estimate, resource_correlation
from .lslo import LanguageSpec
from .pruning import PruneSchedule
from .trainer import RunConfig, evaluate, eval_subset, model_config_for, run_phase, seed_pretrain


@dataclass(frozen=True)
class DeskConfig:
    languages: tuple[LanguageSpec, ...] = (
        LanguageSpec("h1", "High", 1500),
        LanguageSpec("h2", "High", 1500),
        LanguageSpec("v1", "VeryLow", 15),
        LanguageSpec("v2", "VeryLow", 15),
    )
    num_sets: int = 1000
    base_vocab: int = 12
    min_len: int = 3
    max_len: int = 6
    noise: float = 0.1
    num_layers: int = 2
    d_model: int = 32
    num_heads: int = 4
    d_ffn: int = 64
    pretrain_epochs: int = 8
    pretrain_lr: float = 3e-3
    pretrain_pairs: int = 3030
    epochs: int = 15
    pairs_per_direction: int = 40
    ft_lr: float = 1e-3
    lslo_lr: float = 1e-2
    rank_policy: str = "2;2;32"
    gps_ratio: float = 0.9
    prune_scope: tuple[str, ...] = ("High",)
    grouping: str = "per_matrix"
    trace_per_direction: int = 40

    def corpus_spec(self) -> CorpusSpec:
        return CorpusSpec(
            languages=self.languages,
            num_sets=self.num_sets,
            base_vocab=self.base_vocab,
            min_len=self.min_len,
            max_len=self.max_len,
            noise=self.noise,
        )


HIGH_TYPES = frozenset({"High"})
LOW_TYPES = frozenset({"Low", "VeryLow"})


def split_scores(scores: dict[tuple[str, str], float], languages) -> tuple[float, float]:
    """(high, low): mean BLEU over high-to-high directions and over directions touching a low language."""
    kind = {l.code: l.resource_type for l in languages}
    high = [v for (s, t), v in scores.items() if kind[s] in HIGH_TYPES and kind[t] in HIGH_TYPES]
    low = [v for (s, t), v in scores.items() if kind[s] in LOW_TYPES or kind[t] in LOW_TYPES]
    return float(np.mean(high)), float(np.mean(low))


def _trace_high(record: dict, languages) -> float:
    scores = {tuple(k.split("-")): v for k, v in record["bleu"].items()}
    return split_scores(scores, languages)[0]


@dataclass
class DeskResult:
    seed: int
    pretrain: tuple[float, float]
    ft_all: tuple[float, float]
    lslo: tuple[float, float]
    ft_high_trace: list[float]
    seconds: float
    lslo_label: str = ""
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def desk_reproduction(seed: int, cfg: DeskConfig = DeskConfig()) -> DeskResult:
    """Seed-pretrain, then full fine-tuning and LSLo+GPS from the same checkpoint.

    The full fine-tune logs high-resource BLEU after every epoch on a fixed
    held-out subset so its trajectory can be inspected.
    """
    started = time.perf_counter()
    corpus = generate_corpus(cfg.corpus_spec(), seed)
    mc = model_config_for(corpus, cfg.num_layers, cfg.d_model, cfg.num_heads, cfg.d_ffn)
    pre_cfg = RunConfig(
        phase="seed_pretrain", epochs=cfg.pretrain_epochs, learning_rate=cfg.pretrain_lr, total_pairs=cfg.pretrain_pairs, seed=seed
    )
    base = seed_pretrain(mc, corpus, pre_cfg).model
    test = heldout_pairs(corpus)
    langs = corpus.languages

    ft_model = copy.deepcopy(base)
    ft_cfg = RunConfig(
        phase="ft_all",
        epochs=cfg.epochs,
        learning_rate=cfg.ft_lr,
        pairs_per_direction=cfg.pairs_per_direction,
        seed=seed,
        eval_every=1,
        eval_max_per_direction=cfg.trace_per_direction,
    )
    trace_pairs = [p for p in eval_subset(test, cfg.trace_per_direction)]
    ft = run_phase(ft_cfg, ft_model, corpus, eval_pairs=trace_pairs)
    trace = [_trace_high(r, langs) for r in ft.runlog.epochs]

    lslo_cfg = RunConfig(
        phase="lslo_finetune",
        epochs=cfg.epochs,
        learning_rate=cfg.lslo_lr,
        pairs_per_direction=cfg.pairs_per_direction,
        seed=seed,
        rank_policy=cfg.rank_policy,
        schedule=PruneSchedule(cfg.gps_ratio, T=cfg.epochs),
        prune_scope=cfg.prune_scope,
        grouping=cfg.grouping,
    )
    lslo_model = copy.deepcopy(base)
    lslo = run_phase(lslo_cfg, lslo_model, corpus, eval_pairs=[])

    return DeskResult(
        seed=seed,
        pretrain=split_scores(evaluate(base, None, corpus, test), langs),
        ft_all=split_scores(evaluate(ft_model, None, corpus, test), langs),
        lslo=split_scores(evaluate(lslo_model, lslo.stack, corpus, test), langs),
        ft_high_trace=trace,
        seconds=time.perf_counter() - started,
    )


@dataclass(frozen=True)
class EstimationConfig:
    languages: tuple[LanguageSpec, ...] = (
        LanguageSpec("h1", "High", 2000),
        LanguageSpec("h2", "High", 800),
        LanguageSpec("m1", "Medium", 200),
        LanguageSpec("l1", "Low", 50),
        LanguageSpec("v1", "VeryLow", 15),
    )
    num_sets: int = 1000
    base_vocab: int = 12
    min_len: int = 3
    max_len: int = 6
    noise: float = 0.0
    num_layers: int = 2
    d_model: int = 32
    num_heads: int = 4
    d_ffn: int = 64
    pretrain_epochs: int = 8
    pretrain_lr: float = 3e-3
    pretrain_pairs: int | None = None  # None: every available pair
    epochs: int = 15
    learning_rate: float = 1e-2
    pairs_per_direction: int = 20
    ratio: float = 0.7


@dataclass
class EstimationResult:
    seed: int
    r: float
    p_value: float
    language_means: dict[str, float]
    seconds: float


def estimation_run(seed: int, cfg: EstimationConfig = EstimationConfig()) -> EstimationResult:
    """Layer-wise cross-language GPS on an imbalanced corpus, then correlate with log size."""
    started = time.perf_counter()
    spec = CorpusSpec(
        languages=cfg.languages,
        num_sets=cfg.num_sets,
        base_vocab=cfg.base_vocab,
        min_len=cfg.min_len,
        max_len=cfg.max_len,
        noise=cfg.noise,
    )
    corpus = generate_corpus(spec, seed)
    mc = model_config_for(corpus, cfg.num_layers, cfg.d_model, cfg.num_heads, cfg.d_ffn)
    pre = RunConfig(
        phase="seed_pretrain", epochs=cfg.pretrain_epochs, learning_rate=cfg.pretrain_lr, total_pairs=cfg.pretrain_pairs, seed=seed
    )
    base = seed_pretrain(mc, corpus, pre).model
    est = RunConfig(
        phase="estimate_layerwise",
        epochs=cfg.epochs,
        learning_rate=cfg.learning_rate,
        pairs_per_direction=cfg.pairs_per_direction,
        seed=seed,
        schedule=PruneSchedule(cfg.ratio, T=cfg.epochs),
        grouping="layerwise_cross_language",
    )
    res = run_phase(est, base, corpus, eval_pairs=[])
    table = layerwise_cross_language_estimate(res.pruner)
    sizes = {l.code: l.corpus_size for l in corpus.languages}
    r, p = resource_correlation(table, sizes, seed=seed)
    return EstimationResult(seed, r, p, table.language_means(), time.perf_counter() - started)
