"""Training phases: seed pre-training, full fine-tuning, weight learning and LSLo runs."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from . import numcore as nc
from .data import (
    ParallelCorpus,
    TranslationPair,
    build_dataset,
    encode_batch,
    encode_source,
    group_by_direction,
    heldout_pairs,
)
from .errors import ConfigError
from .lslo import (
    PLACEMENTS,
    AdapterStack,
    IndexStrategy,
    build_adapter_stack,
    format_rank_policy,
    parse_rank_policy,
)
from .metrics import bleu
from .model import EOS_ID, PAD_ID, BaseModel, ModelConfig, Route, build_model, decode, encode
from .pruning import GROUPINGS, GradualPruner, PruneSchedule, make_plan
from .rng import derive_rng

log = logging.getLogger(__name__)

PHASES = ("seed_pretrain", "ft_all", "weight_learn", "lslo_finetune", "estimate_layerwise", "estimate_langspec")
ADAPTER_PHASES = frozenset({"weight_learn", "lslo_finetune", "estimate_layerwise", "estimate_langspec"})


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class RunConfig:
    phase: str
    epochs: int = 15
    learning_rate: float = 0.003
    batch_size: int = 16
    rank_policy: str | None = None  # None: every language keeps LanguageSpec.rank
    placement: str = "all"
    index_strategy: str = "src"  # src | tgt | given (a strategy object is passed to run_phase)
    schedule: PruneSchedule | None = None
    prune_scope: tuple[str, ...] | None = None
    grouping: str = "per_matrix"
    seed: int = 0
    total_pairs: int | None = None  # imbalanced sampling budget (seed_pretrain)
    pairs_per_direction: int | None = None  # balanced sampling (other phases)
    eval_every: int = 0
    eval_max_per_direction: int | None = None
    beam: int = 1
    betas: tuple[float, float] = (0.9, 0.98)
    adam_eps: float = 1e-9

    def __post_init__(self):
        if self.phase not in PHASES:
            raise ConfigError(f"unknown phase {self.phase!r}; expected one of {PHASES}")
        if self.epochs < 0 or self.batch_size < 1 or self.learning_rate < 0:
            raise ConfigError("epochs >= 0, batch_size >= 1 and learning_rate >= 0 are required")
        if self.placement not in PLACEMENTS:
            raise ConfigError(f"unknown placement {self.placement!r}")
        if self.grouping not in GROUPINGS:
            raise ConfigError(f"unknown grouping {self.grouping!r}")
        if self.index_strategy not in ("src", "tgt", "given"):
            raise ConfigError(f"index_strategy must be src, tgt or given, got {self.index_strategy!r}")
        if self.rank_policy is not None:
            parse_rank_policy(self.rank_policy)
        if self.schedule is not None and self.schedule.T != self.epochs:
            raise ConfigError(f"schedule T={self.schedule.T} differs from epochs={self.epochs}")
        if self.beam < 1:
            raise ConfigError("beam must be >= 1")

    @property
    def freezes_base(self) -> bool:
        return self.phase in ADAPTER_PHASES

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        if self.prune_scope is not None:
            d["prune_scope"] = list(self.prune_scope)
        return d

    def content_hash(self) -> str:
        return config_hash(self.to_dict())


def config_hash(doc) -> str:
    text = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


# ---------------------------------------------------------------------------
# optimizer


class Adam:
    """Adam with per-parameter step counts.

    Parameters whose ``grad`` is None in a step are skipped entirely (their
    moments do not decay and they do not move), so hard-routed adapters of
    languages absent from the batch stay untouched.
    """

    def __init__(self, params: Sequence[nc.Tensor], lr: float, betas=(0.9, 0.98), eps: float = 1e-9):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = [0] * len(self.params)
        self.steps = 0

    def num_elements(self) -> int:
        return int(sum(p.size for p in self.params))

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        self.steps += 1
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                continue
            self.t[i] += 1
            t = self.t[i]
            self.m[i] = self.b1 * self.m[i] + (1 - self.b1) * g
            self.v[i] = self.b2 * self.v[i] + (1 - self.b2) * (g * g)
            if self.lr == 0:
                continue
            mhat = self.m[i] / (1 - self.b1**t)
            vhat = self.v[i] / (1 - self.b2**t)
            p.data -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


# ---------------------------------------------------------------------------
# logging


@dataclass
class RunLog:
    header: dict
    epochs: list[dict] = field(default_factory=list)
    wall_clock: float = 0.0
    optimizer_steps: int = 0

    def append(self, record: dict) -> None:
        self.epochs.append(record)

    def to_jsonl(self) -> str:
        lines = [json.dumps({"kind": "header", **self.header}, sort_keys=True)]
        lines += [json.dumps({"kind": "epoch", **r}, sort_keys=True) for r in self.epochs]
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# batching


def make_batches(pairs: Sequence[TranslationPair], batch_size: int, rng: np.random.Generator) -> list[list[TranslationPair]]:
    """Single-direction batches, directions interleaved round-robin after a seeded shuffle."""
    per_dir = []
    for _, items in sorted(group_by_direction(pairs).items()):
        order = rng.permutation(len(items))
        shuffled = [items[int(i)] for i in order]
        per_dir.append([shuffled[i : i + batch_size] for i in range(0, len(shuffled), batch_size)])
    dir_order = rng.permutation(len(per_dir))
    queues = [per_dir[int(i)] for i in dir_order]
    batches = []
    depth = max((len(q) for q in queues), default=0)
    for j in range(depth):
        for q in queues:
            if j < len(q):
                batches.append(q[j])
    return batches


def steps_per_epoch(pairs: Sequence[TranslationPair], batch_size: int) -> int:
    return sum(math.ceil(len(v) / batch_size) for v in group_by_direction(pairs).values())


# ---------------------------------------------------------------------------
# loss / decoding


def batch_loss(model: BaseModel, adapters, corpus: ParallelCorpus, batch: Sequence[TranslationPair]) -> nc.Tensor:
    src, dec_in, dec_out = encode_batch(corpus, batch)
    route = Route(batch[0].src_lang, batch[0].tgt_lang)
    logits = model(src, dec_in, adapters, route)
    return nc.cross_entropy(logits, dec_out, PAD_ID)


def _strip(tokens) -> tuple[int, ...]:
    out = []
    for t in tokens:
        if t == EOS_ID:
            break
        out.append(int(t))
    return tuple(out)


def greedy_decode(model: BaseModel, adapters, corpus: ParallelCorpus, pairs: Sequence[TranslationPair]) -> list[tuple[int, ...]]:
    """Batched greedy decoding for pairs that share one direction."""
    route = Route(pairs[0].src_lang, pairs[0].tgt_lang)
    if any((p.src_lang, p.tgt_lang) != (route.src, route.tgt) for p in pairs):
        raise ValueError("greedy_decode needs pairs of a single direction")
    src = encode_source(corpus, pairs)
    max_steps = model.config.max_len - 1
    with nc.no_grad():
        memory = encode(model, src, adapters, route)
        dec = np.full((len(pairs), 1), corpus.lang_tokens[route.tgt], dtype=np.int64)
        done = np.zeros(len(pairs), dtype=bool)
        for _ in range(max_steps):
            logits = decode(model, memory, src, dec, adapters, route).data[:, -1, :]
            nxt = logits.argmax(axis=-1)
            nxt = np.where(done, PAD_ID, nxt)
            dec = np.concatenate([dec, nxt[:, None]], axis=1)
            done |= nxt == EOS_ID
            if done.all():
                break
    return [_strip(row[1:]) for row in dec]


def beam_decode(
    model: BaseModel,
    adapters,
    corpus: ParallelCorpus,
    pair: TranslationPair,
    width: int = 5,
    alpha: float = 1.0,
) -> tuple[int, ...]:
    """Beam search on one sentence; finished hypotheses ranked by logprob / length**alpha."""
    route = Route(pair.src_lang, pair.tgt_lang)
    src = encode_source(corpus, [pair])
    max_steps = model.config.max_len - 1
    start = corpus.lang_tokens[route.tgt]
    live: list[tuple[list[int], float]] = [([start], 0.0)]
    finished: list[tuple[list[int], float]] = []
    with nc.no_grad():
        memory = encode(model, src, adapters, route)
        for _ in range(max_steps):
            dec = np.array([h for h, _ in live], dtype=np.int64)
            mem = nc.Tensor(np.repeat(memory.data, len(live), axis=0))
            srcs = np.repeat(src, len(live), axis=0)
            logits = decode(model, mem, srcs, dec, adapters, route).data[:, -1, :]
            shifted = logits - logits.max(axis=-1, keepdims=True)
            logp = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
            cands = []
            for h, (toks, score) in enumerate(live):
                top = np.argsort(-logp[h], kind="stable")[:width]
                cands += [(score + float(logp[h, t]), h, int(t)) for t in top]
            cands.sort(key=lambda c: (-c[0], c[1], c[2]))
            live_next = []
            for score, h, t in cands[:width]:
                toks = live[h][0] + [t]
                (finished if t == EOS_ID else live_next).append((toks, score))
            live = live_next
            if len(finished) >= width or not live:
                break
    pool = finished or live
    best = max(pool, key=lambda c: c[1] / (len(c[0]) - 1) ** alpha)
    return _strip(best[0][1:])


def translate(model, adapters, corpus, pairs: Sequence[TranslationPair], beam: int = 1, chunk: int = 64):
    """Decode pairs in any mix of directions; output follows input order."""
    if beam == 1:
        out: list = [None] * len(pairs)
        by_dir: dict = {}
        for i, p in enumerate(pairs):
            by_dir.setdefault((p.src_lang, p.tgt_lang), []).append(i)
        for idx in by_dir.values():
            for j in range(0, len(idx), chunk):
                part = idx[j : j + chunk]
                for i, hyp in zip(part, greedy_decode(model, adapters, corpus, [pairs[i] for i in part])):
                    out[i] = hyp
        return out
    return [beam_decode(model, adapters, corpus, p, beam) for p in pairs]


def evaluate(
    model: BaseModel,
    adapters,
    corpus: ParallelCorpus,
    pairs: Sequence[TranslationPair],
    beam: int = 1,
) -> dict[tuple[str, str], float]:
    """Per-direction corpus BLEU, keyed (src, tgt) in sorted order."""
    scores = {}
    for key, items in sorted(group_by_direction(pairs).items()):
        hyps = translate(model, adapters, corpus, items, beam)
        scores[key] = bleu(hyps, [p.y for p in items])
    return scores


def mean_loss(model, adapters, corpus, pairs, batch_size: int = 64) -> float:
    total, count = 0.0, 0
    with nc.no_grad():
        for _, items in sorted(group_by_direction(pairs).items()):
            for i in range(0, len(items), batch_size):
                chunk = items[i : i + batch_size]
                n = sum(len(p.y) + 1 for p in chunk)
                total += batch_loss(model, adapters, corpus, chunk).item() * n
                count += n
    return total / count if count else float("nan")


# ---------------------------------------------------------------------------
# training loop


def eval_subset(pairs: Sequence[TranslationPair], cap: int | None) -> list[TranslationPair]:
    if cap is None:
        return list(pairs)
    out = []
    for _, items in sorted(group_by_direction(pairs).items()):
        out += items[:cap]
    return out


def train(
    config: RunConfig,
    model: BaseModel,
    adapters: AdapterStack | None,
    dataset: Sequence[TranslationPair],
    corpus: ParallelCorpus,
    *,
    eval_pairs: Sequence[TranslationPair] | None = None,
    pruner: GradualPruner | None = None,
    header: dict | None = None,
) -> RunLog:
    if not dataset:
        raise ConfigError("training dataset is empty")
    if config.freezes_base:
        if adapters is None:
            raise ConfigError(f"phase {config.phase} needs an adapter stack")
        model.freeze()
        params = adapters.parameters()
    else:
        model.unfreeze()
        params = model.parameters()
    opt = Adam(params, config.learning_rate, config.betas, config.adam_eps)
    runlog = RunLog(header or {"phase": config.phase, "config_hash": config.content_hash(), "seed": config.seed})
    runlog.header["trainable_elements"] = opt.num_elements()
    expected_steps = config.epochs * steps_per_epoch(dataset, config.batch_size)
    eval_set = eval_subset(eval_pairs, config.eval_max_per_direction) if eval_pairs else None
    started = time.perf_counter()

    for epoch in range(1, config.epochs + 1):
        record: dict = {"epoch": epoch}
        if pruner is not None:
            rows = pruner.on_epoch_start(epoch)
            record["prune"] = [[r.group_id, r.target_ratio, r.zeroed, r.total] for r in rows]
        batches = make_batches(dataset, config.batch_size, derive_rng(config.seed, "batches", config.phase, epoch))
        losses = []
        for step, batch in enumerate(batches, 1):
            opt.zero_grad()
            try:
                loss = batch_loss(model, adapters, corpus, batch)
                nc.backward(loss)
            except nc.NumericalError as exc:
                raise TrainingError(f"non-finite value at epoch {epoch} step {step}: {exc}") from exc
            opt.step()
            if adapters is not None:
                adapters.reapply_masks()
            losses.append(loss.item())
        record["train_loss"] = float(np.mean(losses))
        record["steps"] = len(batches)
        if adapters is not None and adapters.wl is not None:
            record["wl_weights"] = [[s, i, ws, wt] for s, i, ws, wt in adapters.wl.table()]
        if eval_set:
            record["val_loss"] = mean_loss(model, adapters, corpus, eval_set)
            if config.eval_every and epoch % config.eval_every == 0:
                scores = evaluate(model, adapters, corpus, eval_set, config.beam)
                record["bleu"] = {f"{s}-{t}": v for (s, t), v in scores.items()}
        runlog.append(record)
        log.info("%s epoch %d loss %.4f", config.phase, epoch, record["train_loss"])

    runlog.optimizer_steps = opt.steps
    if opt.steps != expected_steps:
        raise TrainingError(f"optimizer took {opt.steps} steps, expected {expected_steps}")
    runlog.wall_clock = time.perf_counter() - started
    return runlog


# ---------------------------------------------------------------------------
# phases


@dataclass
class PhaseResult:
    model: BaseModel
    stack: AdapterStack | None
    runlog: RunLog
    pruner: GradualPruner | None = None
    strategy: IndexStrategy | None = None


def model_config_for(corpus: ParallelCorpus, num_layers=4, d_model=64, num_heads=4, d_ffn=128) -> ModelConfig:
    return ModelConfig(
        num_layers=num_layers,
        d_model=d_model,
        num_heads=num_heads,
        d_ffn=d_ffn,
        vocab_size=corpus.vocab_size,
        max_len=corpus.spec.max_sentence_len + 2,
    )


def phase_dataset(config: RunConfig, corpus: ParallelCorpus) -> list[TranslationPair]:
    if config.phase == "seed_pretrain":
        return build_dataset(corpus, sampling="imbalanced", total_pairs=config.total_pairs, seed=config.seed)
    return build_dataset(corpus, sampling="balanced", pairs_per_direction=config.pairs_per_direction, seed=config.seed)


def make_stack(config: RunConfig, model_config: ModelConfig, corpus: ParallelCorpus, strategy: IndexStrategy | None = None):
    if not config.freezes_base:
        return None
    if config.index_strategy == "given":
        if strategy is None:
            raise ConfigError("index_strategy 'given' needs a strategy")
    elif config.index_strategy == "tgt":
        strategy = IndexStrategy.uniform(model_config.num_layers, "target", "target")
    else:
        strategy = IndexStrategy.uniform(model_config.num_layers, "source", "target")
    return build_adapter_stack(
        model_config,
        corpus.languages,
        config.rank_policy,
        config.placement,
        seed=config.seed,
        strategy=strategy,
        weight_learning=config.phase == "weight_learn",
    )


def seed_pretrain(model_config: ModelConfig, corpus: ParallelCorpus, config: RunConfig) -> PhaseResult:
    if config.phase != "seed_pretrain":
        config = replace(config, phase="seed_pretrain")
    model = build_model(model_config, config.seed)
    dataset = phase_dataset(config, corpus)
    runlog = train(config, model, None, dataset, corpus, eval_pairs=heldout_pairs(corpus))
    return PhaseResult(model, None, runlog)


def run_phase(
    config: RunConfig,
    model: BaseModel,
    corpus: ParallelCorpus,
    *,
    strategy: IndexStrategy | None = None,
    dataset: Sequence[TranslationPair] | None = None,
    eval_pairs: Sequence[TranslationPair] | None = None,
) -> PhaseResult:
    """Run a fine-tuning phase on ``model`` (mutated in place for ft_all)."""
    if config.phase == "seed_pretrain":
        raise ConfigError("use seed_pretrain() for the seed phase")
    stack = make_stack(config, model.config, corpus, strategy)
    pruner = None
    if config.schedule is not None and stack is not None:
        plan = make_plan(stack, config.grouping, config.prune_scope)
        pruner = GradualPruner(stack, config.schedule, plan)
    dataset = list(dataset) if dataset is not None else phase_dataset(config, corpus)
    eval_pairs = heldout_pairs(corpus) if eval_pairs is None else eval_pairs
    header = {"phase": config.phase, "config_hash": config.content_hash(), "seed": config.seed}
    if stack is not None:
        header["index_strategy"] = config.index_strategy
        header["trainable_param_count"] = stack.trainable_count()
    runlog = train(config, model, stack, dataset, corpus, eval_pairs=eval_pairs, pruner=pruner, header=header)
    return PhaseResult(model, stack, runlog, pruner, stack.strategy if stack is not None else None)


def method_label(config: RunConfig, strategy_label: str | None = None) -> str:
    """Row label in the results table, e.g. ``2;2;8+WL+GPS(0.9)``."""
    if config.phase == "seed_pretrain":
        return "Pre-trained"
    if config.phase == "ft_all":
        return "Ft-all"
    policy = format_rank_policy(parse_rank_policy(config.rank_policy)) if config.rank_policy else "8"
    parts = [policy]
    tag = strategy_label or {"src": "SRC", "tgt": "TGT", "given": "WL"}[config.index_strategy]
    parts.append(tag)
    if config.schedule is not None and config.schedule.P > 0:
        parts.append(f"GPS({config.schedule.P:g})")
    label = "+".join(parts)
    if config.placement != "all":
        label = f"{label} [{config.placement}]"
    return label
