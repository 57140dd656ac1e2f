"""Experiment configuration: dataclass schema plus a strict YAML loader."""

from __future__ import annotations

import dataclasses
import json
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .data import CorpusSpec
from .errors import ConfigError
from .lslo import LanguageSpec
from .pruning import PruneSchedule
from .trainer import RunConfig, config_hash

FORMAT_VERSION = 1


@dataclass
class LanguageConfig:
    code: str
    resource_type: str
    corpus_size: int
    rank: int = 8


@dataclass
class CorpusConfig:
    languages: list[LanguageConfig]
    num_sets: int = 1000
    base_vocab: int = 12
    min_len: int = 3
    max_len: int = 6
    test_fraction: float = 0.2
    families: dict[str, str] = field(default_factory=dict)
    family_shared_fraction: float = 0.75
    reorder: list[str] = field(default_factory=list)
    identity: list[str] = field(default_factory=list)
    affix: bool = True
    noise: float = 0.0
    vocab_limit: int | None = None

    def spec(self) -> CorpusSpec:
        langs = tuple(LanguageSpec(l.code, l.resource_type, l.corpus_size, l.rank) for l in self.languages)
        return CorpusSpec(
            languages=langs,
            num_sets=self.num_sets,
            base_vocab=self.base_vocab,
            min_len=self.min_len,
            max_len=self.max_len,
            test_fraction=self.test_fraction,
            families=tuple(sorted(self.families.items())),
            family_shared_fraction=self.family_shared_fraction,
            reorder=tuple(self.reorder),
            identity=tuple(self.identity),
            affix=self.affix,
            vocab_limit=self.vocab_limit,
            noise=self.noise,
        )


@dataclass
class ModelSection:
    num_layers: int = 4
    d_model: int = 64
    num_heads: int = 4
    d_ffn: int = 128


@dataclass
class GpsConfig:
    P: float
    E: int = 2
    k: int = 8
    T: int = 15


@dataclass
class PhaseConfig:
    epochs: int = 15
    learning_rate: float = 0.003
    batch_size: int = 16
    total_pairs: int | None = None
    pairs_per_direction: int | None = None
    rank_policy: str | None = None
    placement: str = "all"
    index_strategy: str = "src"  # src | tgt | wl (read the weight-learn output)
    gps: GpsConfig | None = None
    prune_scope: list[str] | None = None
    grouping: str = "per_matrix"
    eval_every: int = 0
    eval_max_per_direction: int | None = None


@dataclass
class EvalConfig:
    beam: int = 1
    max_per_direction: int | None = None


PHASE_NAMES = ("seed_pretrain", "ft_all", "weight_learn", "lslo_finetune", "estimate_layerwise", "estimate_langspec")


@dataclass
class ExperimentConfig:
    corpus: CorpusConfig
    model: ModelSection = field(default_factory=ModelSection)
    phases: dict[str, PhaseConfig] = field(default_factory=dict)
    evaluate: EvalConfig = field(default_factory=EvalConfig)
    seed: int = 0
    out: str = "runs/default"

    def __post_init__(self):
        for name in self.phases:
            if name not in PHASE_NAMES:
                raise ConfigError(f"phases.{name}: unknown phase; expected one of {PHASE_NAMES}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def content_hash(self) -> str:
        """Hash of everything that shapes results; the output directory is left out."""
        doc = self.to_dict()
        doc.pop("out")
        return config_hash(doc)

    def phase(self, name: str) -> PhaseConfig:
        if name not in self.phases:
            raise ConfigError(f"phases.{name}: section missing from config")
        return self.phases[name]

    def run_config(self, name: str, beam: int | None = None) -> RunConfig:
        pc = self.phase(name)
        sched = None
        if pc.gps is not None:
            try:
                sched = PruneSchedule(pc.gps.P, pc.gps.E, pc.gps.k, pc.gps.T)
            except ConfigError as exc:
                raise ConfigError(f"phases.{name}.gps: {exc}") from exc
        strategy = "given" if pc.index_strategy == "wl" else pc.index_strategy
        if name == "weight_learn":
            strategy = "src"
        grouping = pc.grouping
        if name == "estimate_layerwise":
            grouping = "layerwise_cross_language"
        elif name == "estimate_langspec":
            grouping = "language_specific_global"
        try:
            return RunConfig(
                phase=name,
                epochs=pc.epochs,
                learning_rate=pc.learning_rate,
                batch_size=pc.batch_size,
                rank_policy=pc.rank_policy,
                placement=pc.placement,
                index_strategy=strategy,
                schedule=sched,
                prune_scope=tuple(pc.prune_scope) if pc.prune_scope is not None else None,
                grouping=grouping,
                seed=self.seed,
                total_pairs=pc.total_pairs,
                pairs_per_direction=pc.pairs_per_direction,
                eval_every=pc.eval_every,
                eval_max_per_direction=pc.eval_max_per_direction,
                beam=beam if beam is not None else self.evaluate.beam,
            )
        except ConfigError as exc:
            raise ConfigError(f"phases.{name}: {exc}") from exc


# ---------------------------------------------------------------------------
# loading


def _build(tp, value, path: str):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin in (typing.Union, types.UnionType):
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _build(inner[0], value, path)
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: expected a mapping, got {type(value).__name__}")
        hints = typing.get_type_hints(tp)
        names = {f.name for f in dataclasses.fields(tp)}
        for key in value:
            if key not in names:
                raise ConfigError(f"{path}.{key}: unknown key" if path else f"{key}: unknown key")
        kwargs = {}
        for f in dataclasses.fields(tp):
            sub = f"{path}.{f.name}" if path else f.name
            if f.name in value:
                kwargs[f.name] = _build(hints[f.name], value[f.name], sub)
            elif f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING:
                raise ConfigError(f"{sub}: required key missing")
        try:
            return tp(**kwargs)
        except ConfigError as exc:
            msg = str(exc)
            raise ConfigError(msg if msg.startswith(path) else f"{path or '<root>'}: {msg}") from exc
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{path or '<root>'}: {exc}") from exc
    if origin is list:
        if not isinstance(value, list):
            raise ConfigError(f"{path}: expected a list")
        return [_build(args[0], v, f"{path}[{i}]") for i, v in enumerate(value)]
    if origin is dict:
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: expected a mapping")
        return {str(k): _build(args[1], v, f"{path}.{k}") for k, v in value.items()}
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    raise ConfigError(f"{path}: unsupported field type {tp}")


def from_dict(doc: dict) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigError("<root>: config must be a mapping")
    cfg = _build(ExperimentConfig, doc, "")
    # surface corpus problems before any work starts
    try:
        cfg.corpus.spec()
    except ConfigError as exc:
        raise ConfigError(f"corpus: {exc}") from exc
    for name in cfg.phases:
        cfg.run_config(name)
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {str(exc).splitlines()[0]}") from exc
    return from_dict(doc)


def dump_config(cfg: ExperimentConfig) -> str:
    return json.dumps(cfg.to_dict(), indent=1, sort_keys=True) + "\n"
