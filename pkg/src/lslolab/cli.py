"""Command-line driver: ``lslolab <subcommand> --config exp.yaml``.

Every subcommand reads one YAML config, derives all randomness from the root
seed, and writes into ``<out>/<stage>/``. Existing outputs are never
overwritten without ``--force``. Failures print one ``error[<kind>]: ...``
line to stderr and exit with 2 (config), 3 (missing prerequisite) or
4 (numerical failure).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import io
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import checkpoint
from .config import FORMAT_VERSION, ExperimentConfig, load_config
from .data import build_dataset, generate_corpus, heldout_pairs, manifest, manifest_json
from .errors import ConfigError, DegenerateInputError, MissingPrerequisiteError
from .estimation import (
    check_uniform_rank,
    language_specific_estimate,
    layerwise_cross_language_estimate,
    resource_correlation,
)
from .lslo import AdapterStack, IndexStrategy, resolve_index_strategy
from .metrics import bucket_report, format_params, report_csv, report_json
from .model import BaseModel, ModelConfig, build_model
from .pruning import PruneSchedule
from .trainer import (
    TrainingError,
    eval_subset,
    evaluate,
    method_label,
    model_config_for,
    run_phase,
    seed_pretrain,
)

log = logging.getLogger("lslolab")

EXIT_CONFIG, EXIT_MISSING, EXIT_NUMERICAL = 2, 3, 4


# every subcommand in dependency order
PIPELINE = (
    ("gen-data",),
    ("seed-pretrain",),
    ("weight-learn",),
    ("train", "--phase", "ft_all"),
    ("train", "--phase", "lslo_finetune"),
    ("estimate", "--mode", "layerwise"),
    ("estimate", "--mode", "langspec"),
    ("evaluate", "--phase", "lslo_finetune"),
    ("report",),
)


class ConflictError(ConfigError):
    pass


# ---------------------------------------------------------------------------
# context


@dataclasses.dataclass
class Context:
    cfg: ExperimentConfig
    out: Path
    force: bool
    beam: int | None

    @property
    def seed(self) -> int:
        return self.cfg.seed

    def header(self, **extra) -> str:
        lines = [f"config_hash={self.cfg.content_hash()} seed={self.seed} format_version={FORMAT_VERSION}"]
        lines += [f"{k}={v}" for k, v in extra.items()]
        return "\n".join(lines)

    def stage_dir(self, name: str) -> Path:
        path = self.out / name
        if path.exists() and any(path.iterdir()) and not self.force:
            raise ConflictError(f"{path} already has outputs; pass --force to overwrite")
        path.mkdir(parents=True, exist_ok=True)
        return path


def _write(path: Path, text: str | bytes) -> None:
    if isinstance(text, bytes):
        path.write_bytes(text)
    else:
        path.write_text(text, encoding="utf-8")


def _sha(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _need(path: Path, hint: str) -> Path:
    if not path.exists():
        raise MissingPrerequisiteError(f"{path} not found; {hint}")
    return path


def _corpus(ctx: Context):
    manifest_path = _need(ctx.out / "data" / "manifest.json", "run `lslolab gen-data` first")
    corpus = generate_corpus(ctx.cfg.corpus.spec(), ctx.seed)
    recorded = json.loads(manifest_path.read_text())["corpus_sha256"]
    if recorded != corpus.checksum():
        raise ConfigError("corpus on disk was generated from a different config or seed; rerun gen-data --force")
    return corpus


def _model_config(ctx: Context, corpus) -> ModelConfig:
    m = ctx.cfg.model
    return model_config_for(corpus, m.num_layers, m.d_model, m.num_heads, m.d_ffn)


def _save_model(path: Path, model: BaseModel, metadata: dict) -> None:
    tensors = {name: p.data for name, p in model.params.items()}
    checkpoint.save(path, tensors, model.config.to_dict(), metadata)


def _load_model(path: Path, expected: ModelConfig) -> BaseModel:
    header, tensors = checkpoint.load(path)
    if header["model_config"] != expected.to_dict():
        raise ConfigError(f"{path} was trained with a different model config")
    model = build_model(expected, 0)
    for name, p in model.params.items():
        p.data[...] = tensors[name]
    return model


def _seed_model(ctx: Context, corpus) -> tuple[BaseModel, str]:
    path = _need(ctx.out / "seed_pretrain" / "model.ckpt", "run `lslolab seed-pretrain` first")
    return _load_model(path, _model_config(ctx, corpus)), _sha(path)


def _adapter_tensors(stack: AdapterStack) -> dict[str, np.ndarray]:
    out = {}
    for site, code, f in stack.items():
        out[f"lslo/{site.key}/{code}/A"] = f.A.data
        out[f"lslo/{site.key}/{code}/B"] = f.B.data
        out[f"lslo/{site.key}/{code}/mask"] = f.mask
    if stack.wl is not None:
        for (side, layer), t in sorted(stack.wl.raw.items()):
            out[f"wl/{side}/{layer}"] = t.data
    return out


def load_adapter_tensors(stack: AdapterStack, tensors: dict[str, np.ndarray]) -> None:
    for site, code, f in stack.items():
        f.A.data[...] = tensors[f"lslo/{site.key}/{code}/A"]
        f.B.data[...] = tensors[f"lslo/{site.key}/{code}/B"]
        f.mask = tensors[f"lslo/{site.key}/{code}/mask"].copy()


def _eval_pairs(ctx: Context, corpus):
    return eval_subset(heldout_pairs(corpus), ctx.cfg.evaluate.max_per_direction)


def _bleu_outputs(ctx: Context, stage: Path, method: str, params: str, scores, corpus) -> None:
    rep = bucket_report(scores, corpus.languages)
    _write(stage / "report.csv", report_csv([(method, params, rep)], ctx.header(stage=stage.name)))
    _write(stage / "report.json", report_json(method, params, rep))


def _write_runlog(stage: Path, runlog, ctx: Context) -> None:
    runlog.header["experiment_config_hash"] = ctx.cfg.content_hash()
    _write(stage / "runlog.jsonl", runlog.to_jsonl())
    log.info("%s: %d optimizer steps in %.1fs", stage.name, runlog.optimizer_steps, runlog.wall_clock)


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_data(ctx: Context) -> None:
    corpus = generate_corpus(ctx.cfg.corpus.spec(), ctx.seed)
    stage = ctx.stage_dir("data")
    datasets = {"test": heldout_pairs(corpus)}
    if "seed_pretrain" in ctx.cfg.phases:
        pc = ctx.cfg.phases["seed_pretrain"]
        datasets["seed_pretrain"] = build_dataset(corpus, sampling="imbalanced", total_pairs=pc.total_pairs, seed=ctx.seed)
    for name in ("ft_all", "lslo_finetune"):
        if name in ctx.cfg.phases:
            pc = ctx.cfg.phases[name]
            datasets[name] = build_dataset(corpus, sampling="balanced", pairs_per_direction=pc.pairs_per_direction, seed=ctx.seed)
    _write(stage / "corpus.tsv", corpus.to_text())
    doc = manifest(corpus, datasets)
    doc["config_hash"] = ctx.cfg.content_hash()
    doc["seed"] = ctx.seed
    _write(stage / "manifest.json", manifest_json(doc))


def cmd_seed_pretrain(ctx: Context) -> None:
    corpus = _corpus(ctx)
    rc = ctx.cfg.run_config("seed_pretrain")
    stage = ctx.stage_dir("seed_pretrain")
    res = seed_pretrain(_model_config(ctx, corpus), corpus, rc)
    _save_model(stage / "model.ckpt", res.model, {"phase": "seed_pretrain", "config_hash": ctx.cfg.content_hash(), "seed": ctx.seed})
    _write_runlog(stage, res.runlog, ctx)
    scores = evaluate(res.model, None, corpus, _eval_pairs(ctx, corpus), ctx.beam or ctx.cfg.evaluate.beam)
    _bleu_outputs(ctx, stage, "Pre-trained", "-", scores, corpus)


def cmd_weight_learn(ctx: Context) -> None:
    corpus = _corpus(ctx)
    model, base_sha = _seed_model(ctx, corpus)
    rc = ctx.cfg.run_config("weight_learn")
    stage = ctx.stage_dir("weight_learn")
    res = run_phase(rc, model, corpus)
    res.runlog.header["base_checkpoint_sha256"] = base_sha
    _write_runlog(stage, res.runlog, ctx)
    wl = res.stack.wl
    buf = io.StringIO()
    buf.write("".join(f"# {line}\n" for line in ctx.header(stage="weight_learn").splitlines()))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["side", "layer", "w_src", "w_tgt"])
    for side, layer, ws, wt in wl.table():
        w.writerow([side, layer, repr(ws), repr(wt)])
    _write(stage / "weights.csv", buf.getvalue())
    _write(stage / "strategy.json", resolve_index_strategy(wl).to_json())


def _strategy(ctx: Context, pc_name: str) -> IndexStrategy | None:
    if ctx.cfg.phase(pc_name).index_strategy != "wl":
        return None
    path = _need(ctx.out / "weight_learn" / "strategy.json", "run `lslolab weight-learn` first")
    return IndexStrategy.from_json(path.read_text())


def cmd_train(ctx: Context, phase: str) -> None:
    if phase not in ("ft_all", "lslo_finetune"):
        raise ConfigError(f"train --phase must be ft_all or lslo_finetune, got {phase!r}")
    corpus = _corpus(ctx)
    model, base_sha = _seed_model(ctx, corpus)
    rc = ctx.cfg.run_config(phase)
    strategy = _strategy(ctx, phase)
    stage = ctx.stage_dir(phase)
    res = run_phase(rc, model, corpus, strategy=strategy, eval_pairs=_eval_pairs(ctx, corpus))
    res.runlog.header["base_checkpoint_sha256"] = base_sha
    _write_runlog(stage, res.runlog, ctx)
    meta = {"phase": phase, "config_hash": ctx.cfg.content_hash(), "seed": ctx.seed, "base_checkpoint_sha256": base_sha}
    if res.stack is None:
        _save_model(stage / "model.ckpt", model, meta)
        params = format_params(model.num_parameters())
    else:
        meta["index_strategy"] = json.loads(res.stack.strategy.to_json())
        checkpoint.save(stage / "adapters.ckpt", _adapter_tensors(res.stack), model.config.to_dict(), meta)
        params = format_params(res.stack.trainable_count())
    if res.pruner is not None:
        from .pruning import prune_log_csv

        _write(stage / "prune_log.csv", prune_log_csv(res.pruner.log))
    label = method_label(rc, "WL" if strategy is not None else None)
    scores = evaluate(model, res.stack, corpus, _eval_pairs(ctx, corpus), ctx.beam or ctx.cfg.evaluate.beam)
    _bleu_outputs(ctx, stage, label, params, scores, corpus)


def cmd_estimate(ctx: Context, mode: str) -> None:
    names = {"layerwise": "estimate_layerwise", "langspec": "estimate_langspec"}
    if mode not in names:
        raise ConfigError(f"estimate --mode must be layerwise or langspec, got {mode!r}")
    phase = names[mode]
    corpus = _corpus(ctx)
    model, base_sha = _seed_model(ctx, corpus)
    rc = ctx.cfg.run_config(phase)
    if rc.schedule is None:
        rc = dataclasses.replace(rc, schedule=PruneSchedule(0.7, T=rc.epochs))
    stage = ctx.stage_dir(phase)
    res = run_phase(rc, model, corpus, strategy=_strategy(ctx, phase))
    check_uniform_rank(res.stack)
    res.runlog.header["base_checkpoint_sha256"] = base_sha
    _write_runlog(stage, res.runlog, ctx)
    table = layerwise_cross_language_estimate(res.pruner) if mode == "layerwise" else language_specific_estimate(res.pruner)
    head = ctx.header(stage=phase, grouping=table.grouping, ratio=table.ratio)
    _write(stage / "scores.csv", table.to_csv(head))
    _write(stage / "heatmap_kind.csv", table.heatmap_csv(head))
    _write(stage / "heatmap_layer.csv", table.layer_heatmap_csv(head))
    sizes = {l.code: l.corpus_size for l in corpus.languages}
    buf = io.StringIO()
    buf.write("".join(f"# {line}\n" for line in head.splitlines()))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["language", "log10_corpus_size", "mean_score"])
    for code, v in table.language_means().items():
        w.writerow([code, repr(math.log10(sizes[code])), repr(v)])
    try:
        r, p = resource_correlation(table, sizes, seed=ctx.seed)
        buf.write(f"# pearson_r={r!r} p_value={p!r}\n")
    except DegenerateInputError as exc:
        buf.write(f"# pearson undefined: {exc}\n")
    _write(stage / "correlation.csv", buf.getvalue())


def cmd_evaluate(ctx: Context, phase: str) -> None:
    corpus = _corpus(ctx)
    model, _ = _seed_model(ctx, corpus)
    stack = None
    if phase == "ft_all":
        model = _load_model(_need(ctx.out / "ft_all" / "model.ckpt", "run `lslolab train --phase ft_all` first"), model.config)
    elif phase == "lslo_finetune":
        from .trainer import make_stack

        path = _need(ctx.out / phase / "adapters.ckpt", "run `lslolab train --phase lslo_finetune` first")
        header, tensors = checkpoint.load(path)
        rc = ctx.cfg.run_config(phase)
        strategy = IndexStrategy.from_json(json.dumps(header["metadata"]["index_strategy"]))
        stack = make_stack(dataclasses.replace(rc, index_strategy="given"), model.config, corpus, strategy)
        load_adapter_tensors(stack, tensors)
    elif phase != "seed_pretrain":
        raise ConfigError(f"evaluate --phase must be seed_pretrain, ft_all or lslo_finetune, got {phase!r}")
    beam = ctx.beam or ctx.cfg.evaluate.beam
    scores = evaluate(model, stack, corpus, _eval_pairs(ctx, corpus), beam)
    out = ctx.out / "evaluate"
    out.mkdir(parents=True, exist_ok=True)
    target = out / f"{phase}_beam{beam}.csv"
    if target.exists() and not ctx.force:
        raise ConflictError(f"{target} exists; pass --force to overwrite")
    rep = bucket_report(scores, corpus.languages)
    buf = io.StringIO()
    buf.write("".join(f"# {line}\n" for line in ctx.header(stage="evaluate", phase=phase, beam=beam).splitlines()))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["direction", "bleu"])
    for d, v in rep.directions.items():
        w.writerow([d, f"{v:.4f}"])
    _write(target, buf.getvalue())


REPORT_ORDER = ("seed_pretrain", "ft_all", "lslo_finetune")


def cmd_report(ctx: Context) -> None:
    from .metrics import BleuReport

    rows = []
    for name in REPORT_ORDER:
        path = ctx.out / name / "report.json"
        if path.exists():
            doc = json.loads(path.read_text())
            order = list(doc["buckets"])
            rep = BleuReport(doc["directions"], doc["buckets"], doc["AVG_buckets"], doc["AVG_directions"], order)
            rows.append((doc["method"], doc["params"], rep))
    if not rows:
        raise MissingPrerequisiteError(f"no phase reports under {ctx.out}; run seed-pretrain or train first")
    target = ctx.out / "report.csv"
    if target.exists() and not ctx.force:
        raise ConflictError(f"{target} exists; pass --force to overwrite")
    _write(target, report_csv(rows, ctx.header(stage="report")))


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="experiment YAML file")
    common.add_argument("--seed", type=int, default=None, help="override the root seed")
    common.add_argument("--out", default=None, help="override the output directory")
    common.add_argument("--force", action="store_true", help="overwrite existing outputs")
    common.add_argument("--beam", type=int, default=None, help="beam width for evaluation (1 = greedy)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="lslolab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-data", parents=[common], help="generate the synthetic corpus and dataset manifest")
    sub.add_parser("seed-pretrain", parents=[common], help="train the base model on imbalanced data")
    sub.add_parser("weight-learn", parents=[common], help="learn per-layer source/target index weights")
    p = sub.add_parser("train", parents=[common], help="fine-tune: ft_all or lslo_finetune")
    p.add_argument("--phase", required=True, choices=["ft_all", "lslo_finetune"])
    p = sub.add_parser("estimate", parents=[common], help="pruning-based importance scores")
    p.add_argument("--mode", required=True, choices=["layerwise", "langspec"])
    p = sub.add_parser("evaluate", parents=[common], help="re-score a checkpoint on held-out sets")
    p.add_argument("--phase", default="seed_pretrain", choices=["seed_pretrain", "ft_all", "lslo_finetune"])
    sub.add_parser("report", parents=[common], help="collect phase reports into one table")
    return parser


def _fail(kind: str, msg: str, code: int) -> int:
    print(f"error[{kind}]: {' '.join(str(msg).split())}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = dataclasses.replace(cfg, seed=args.seed)
        if args.out is not None:
            cfg = dataclasses.replace(cfg, out=args.out)
        if args.beam is not None and args.beam < 1:
            raise ConfigError("--beam must be >= 1")
        ctx = Context(cfg, Path(cfg.out), args.force, args.beam)
        ctx.out.mkdir(parents=True, exist_ok=True)
        if args.command == "gen-data":
            cmd_gen_data(ctx)
        elif args.command == "seed-pretrain":
            cmd_seed_pretrain(ctx)
        elif args.command == "weight-learn":
            cmd_weight_learn(ctx)
        elif args.command == "train":
            cmd_train(ctx, args.phase)
        elif args.command == "estimate":
            cmd_estimate(ctx, args.mode)
        elif args.command == "evaluate":
            cmd_evaluate(ctx, args.phase)
        elif args.command == "report":
            cmd_report(ctx)
    except ConflictError as exc:
        return _fail("conflict", exc, EXIT_CONFIG)
    except MissingPrerequisiteError as exc:
        return _fail("missing", exc, EXIT_MISSING)
    except TrainingError as exc:
        return _fail("numerical", exc, EXIT_NUMERICAL)
    except ConfigError as exc:
        return _fail("config", exc, EXIT_CONFIG)
    return 0


if __name__ == "__main__":
    sys.exit(main())
