"""Small pre-norm encoder-decoder transformer with addressable adapter sites."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Protocol

import numpy as np

from . import numcore as nc
from .errors import ConfigError
from .numcore import Tensor
from .rng import derive_rng

PAD_ID = 0
EOS_ID = 1

ENCODER_KINDS = ("q", "k", "v", "fc1", "fc2")
DECODER_KINDS = ("q", "k", "v", "c-q", "c-k", "c-v", "fc1", "fc2")
ATTN_KINDS = frozenset({"q", "k", "v", "c-q", "c-k", "c-v"})
FC_KINDS = frozenset({"fc1", "fc2"})

_NEG = -1e30


@dataclass(frozen=True)
class ModelConfig:
    num_layers: int = 4
    d_model: int = 64
    num_heads: int = 4
    d_ffn: int = 128
    vocab_size: int = 64
    max_len: int = 16

    def __post_init__(self):
        for name in ("d_model", "num_heads", "d_ffn", "vocab_size", "max_len"):
            if int(getattr(self, name)) <= 0:
                raise ConfigError(f"model.{name} must be positive, got {getattr(self, name)}")
        if self.num_layers < 0:
            raise ConfigError(f"model.num_layers must be >= 0, got {self.num_layers}")
        if self.d_model % self.num_heads:
            raise ConfigError(f"d_model={self.d_model} is not divisible by num_heads={self.num_heads}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, order=True)
class LsloSite:
    side: str
    layer: int
    kind: str

    def __post_init__(self):
        if self.side not in ("encoder", "decoder"):
            raise ValueError(f"unknown side {self.side!r}")
        kinds = ENCODER_KINDS if self.side == "encoder" else DECODER_KINDS
        if self.kind not in kinds:
            raise ValueError(f"kind {self.kind!r} is not valid on the {self.side}")
        if self.layer < 0:
            raise ValueError("layer must be >= 0")

    @property
    def key(self) -> str:
        return f"{'enc' if self.side == 'encoder' else 'dec'}.{self.layer}.{self.kind}"


def enumerate_sites(config: ModelConfig) -> list[LsloSite]:
    sites = [LsloSite("encoder", i, k) for i in range(config.num_layers) for k in ENCODER_KINDS]
    sites += [LsloSite("decoder", i, k) for i in range(config.num_layers) for k in DECODER_KINDS]
    return sites


def site_dims(config: ModelConfig, site: LsloSite) -> tuple[int, int]:
    """(d, k): output and input size of the site's weight matrix."""
    d, f = config.d_model, config.d_ffn
    if site.kind == "fc1":
        return f, d
    if site.kind == "fc2":
        return d, f
    return d, d


@dataclass(frozen=True)
class Route:
    """Direction of the current batch; adapters pick their language from it."""

    src: str
    tgt: str


class Adapters(Protocol):
    def delta(self, site: LsloSite, x: Tensor, route: Route | None) -> Tensor | None: ...


class BaseModel:
    def __init__(self, config: ModelConfig, params: dict[str, Tensor]):
        self.config = config
        self.params = params
        self.frozen = False
        self._sites = {s.key: s for s in enumerate_sites(config)}

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def num_parameters(self) -> int:
        return int(np.sum([p.size for p in self.params.values()]))

    def freeze(self) -> None:
        self.frozen = True
        for p in self.params.values():
            p.requires_grad = False
            p.grad = None

    def unfreeze(self) -> None:
        self.frozen = False
        for p in self.params.values():
            p.requires_grad = True

    def state_bytes(self) -> bytes:
        return b"".join(self.params[k].data.tobytes() for k in sorted(self.params))

    def __call__(self, src, tgt, adapters: Adapters | None = None, route: Route | None = None) -> Tensor:
        return forward(self, src, tgt, adapters, route)


def build_model(config: ModelConfig, seed: int) -> BaseModel:
    if not isinstance(config, ModelConfig):
        raise ConfigError("build_model needs a ModelConfig")
    rng = derive_rng(seed, "model-init")
    d, f, V, L = config.d_model, config.d_ffn, config.vocab_size, config.max_len
    params: dict[str, Tensor] = {}

    def normal(name, shape, std):
        params[name] = Tensor(rng.normal(0.0, std, size=shape), requires_grad=True, name=name)

    def const(name, shape, value):
        params[name] = Tensor(np.full(shape, value), requires_grad=True, name=name)

    def dense(prefix, out_dim, in_dim):
        normal(prefix + ".W", (out_dim, in_dim), 1.0 / math.sqrt(in_dim))
        const(prefix + ".b", (out_dim,), 0.0)

    def norm(prefix):
        const(prefix + ".g", (d,), 1.0)
        const(prefix + ".b", (d,), 0.0)

    normal("embed", (V, d), 1.0 / math.sqrt(d))
    normal("enc.pos", (L, d), 0.1)
    normal("dec.pos", (L, d), 0.1)
    for i in range(config.num_layers):
        p = f"enc.{i}"
        norm(p + ".ln1")
        for kind in ("q", "k", "v", "o"):
            dense(f"{p}.{kind}", d, d)
        norm(p + ".ln2")
        dense(p + ".fc1", f, d)
        dense(p + ".fc2", d, f)
    norm("enc.ln_f")
    for i in range(config.num_layers):
        p = f"dec.{i}"
        norm(p + ".ln1")
        for kind in ("q", "k", "v", "o"):
            dense(f"{p}.{kind}", d, d)
        norm(p + ".ln2")
        for kind in ("c-q", "c-k", "c-v", "c-o"):
            dense(f"{p}.{kind}", d, d)
        norm(p + ".ln3")
        dense(p + ".fc1", f, d)
        dense(p + ".fc2", d, f)
    norm("dec.ln_f")
    normal("out_proj", (V, d), 1.0 / math.sqrt(d))
    return BaseModel(config, params)


# ---------------------------------------------------------------------------
# forward


class _Ctx:
    __slots__ = ("model", "adapters", "route")

    def __init__(self, model, adapters, route):
        self.model = model
        self.adapters = adapters
        self.route = route

    def proj(self, x: Tensor, prefix: str) -> Tensor:
        P = self.model.params
        h = nc.linear(x, P[prefix + ".W"], P[prefix + ".b"])
        site = self.model._sites.get(prefix)
        if site is not None and self.adapters is not None:
            extra = self.adapters.delta(site, x, self.route)
            if extra is not None:
                h = h + extra
        return h

    def norm(self, x: Tensor, prefix: str) -> Tensor:
        P = self.model.params
        return nc.layer_norm(x, P[prefix + ".g"], P[prefix + ".b"])


def _split_heads(x: Tensor, heads: int) -> Tensor:
    B, T, d = x.shape
    return nc.transpose(nc.reshape(x, (B, T, heads, d // heads)), (0, 2, 1, 3))


def _merge_heads(x: Tensor) -> Tensor:
    B, H, T, dh = x.shape
    return nc.reshape(nc.transpose(x, (0, 2, 1, 3)), (B, T, H * dh))


def _attention(ctx: _Ctx, xq: Tensor, xkv: Tensor, prefix: str, q: str, k: str, v: str, o: str, blocked: np.ndarray):
    heads = ctx.model.config.num_heads
    Q = _split_heads(ctx.proj(xq, f"{prefix}.{q}"), heads)
    K = _split_heads(ctx.proj(xkv, f"{prefix}.{k}"), heads)
    Vv = _split_heads(ctx.proj(xkv, f"{prefix}.{v}"), heads)
    scale = 1.0 / math.sqrt(Q.shape[-1])
    scores = nc.matmul(Q, nc.transpose(K, (0, 1, 3, 2))) * scale
    scores = nc.masked_fill(scores, blocked, _NEG)
    attn = nc.softmax(scores, axis=-1)
    out = _merge_heads(nc.matmul(attn, Vv))
    P = ctx.model.params
    return nc.linear(out, P[f"{prefix}.{o}.W"], P[f"{prefix}.{o}.b"])


def _ffn(ctx: _Ctx, x: Tensor, prefix: str) -> Tensor:
    return ctx.proj(nc.gelu(ctx.proj(x, prefix + ".fc1")), prefix + ".fc2")


def _embed(model: BaseModel, ids: np.ndarray, pos_name: str) -> Tensor:
    d = model.config.d_model
    tok = nc.embedding(model.params["embed"], ids) * math.sqrt(d)
    return tok + model.params[pos_name][: ids.shape[1]]


def _check_ids(model: BaseModel, ids, what: str) -> np.ndarray:
    arr = np.asarray(ids, dtype=np.int64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] == 0:
        raise ValueError(f"{what} tokens must be a non-empty 1-d or 2-d id array")
    cfg = model.config
    if arr.min() < 0 or arr.max() >= cfg.vocab_size:
        raise ValueError(f"{what} token id out of range [0, {cfg.vocab_size})")
    if arr.shape[1] > cfg.max_len:
        raise ValueError(f"{what} length {arr.shape[1]} exceeds max_len={cfg.max_len}")
    return arr


def encode(model: BaseModel, src: np.ndarray, adapters=None, route=None) -> Tensor:
    ctx = _Ctx(model, adapters, route)
    pad = (src == PAD_ID)[:, None, None, :]
    x = _embed(model, src, "enc.pos")
    for i in range(model.config.num_layers):
        p = f"enc.{i}"
        h = ctx.norm(x, p + ".ln1")
        x = x + _attention(ctx, h, h, p, "q", "k", "v", "o", pad)
        x = x + _ffn(ctx, ctx.norm(x, p + ".ln2"), p)
    return ctx.norm(x, "enc.ln_f")


def decode(model: BaseModel, memory: Tensor, src: np.ndarray, tgt: np.ndarray, adapters=None, route=None) -> Tensor:
    ctx = _Ctx(model, adapters, route)
    T = tgt.shape[1]
    causal = np.triu(np.ones((T, T), dtype=bool), k=1)[None, None]
    self_block = causal | (tgt == PAD_ID)[:, None, None, :]
    cross_block = (src == PAD_ID)[:, None, None, :]
    x = _embed(model, tgt, "dec.pos")
    for i in range(model.config.num_layers):
        p = f"dec.{i}"
        h = ctx.norm(x, p + ".ln1")
        x = x + _attention(ctx, h, h, p, "q", "k", "v", "o", self_block)
        h = ctx.norm(x, p + ".ln2")
        x = x + _attention(ctx, h, memory, p, "c-q", "c-k", "c-v", "c-o", cross_block)
        x = x + _ffn(ctx, ctx.norm(x, p + ".ln3"), p)
    x = ctx.norm(x, "dec.ln_f")
    return nc.linear(x, model.params["out_proj"])


def forward(model: BaseModel, src, tgt, adapters: Adapters | None = None, route: Route | None = None) -> Tensor:
    """Logits of shape [batch, tgt positions, vocab] ([positions, vocab] for 1-d inputs)."""
    single = np.asarray(src).ndim == 1
    src_ids = _check_ids(model, src, "source")
    tgt_ids = _check_ids(model, tgt, "target")
    if src_ids.shape[0] != tgt_ids.shape[0]:
        raise ValueError("source and target batch sizes differ")
    memory = encode(model, src_ids, adapters, route)
    logits = decode(model, memory, src_ids, tgt_ids, adapters, route)
    if single:
        logits = nc.reshape(logits, logits.shape[1:])
    return logits
