"""Synthetic multilingual parallel corpora with controllable resource imbalance.

Each sentence set holds one latent "meaning" (a random sequence over a base
alphabet). A language realises a meaning through its own grammar: a token
substitution table, an optional adjacent-pair reordering, and an optional
affix token. Translation between two languages is therefore a learnable,
invertible function of the source sentence.
"""

from __future__ import annotations

import hashlib
import json
import math
from fractions import Fraction
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError
from .lslo import RESOURCE_ABBREV, LanguageSpec, check_unique
from .model import EOS_ID, PAD_ID
from .rng import derive_rng

NUM_SPECIAL = 2  # PAD, EOS


@dataclass(frozen=True)
class CorpusSpec:
    languages: tuple[LanguageSpec, ...]
    num_sets: int = 200
    base_vocab: int = 16
    min_len: int = 3
    max_len: int = 8
    test_fraction: float = 0.2
    families: tuple[tuple[str, str], ...] = ()
    family_shared_fraction: float = 0.75
    reorder: tuple[str, ...] = ()
    identity: tuple[str, ...] = ()
    affix: bool = True
    vocab_limit: int | None = None
    noise: float = 0.0  # per-token substitution rate on training sets only

    def __post_init__(self):
        check_unique(self.languages)
        if self.num_sets < 1:
            raise ConfigError("corpus.num_sets must be >= 1")
        if not (1 <= self.min_len <= self.max_len):
            raise ConfigError("corpus lengths need 1 <= min_len <= max_len")
        if self.base_vocab < 1:
            raise ConfigError("corpus.base_vocab must be >= 1")
        if not (0.0 <= self.test_fraction < 1.0):
            raise ConfigError("corpus.test_fraction must lie in [0, 1)")
        if not (0.0 <= self.noise < 1.0):
            raise ConfigError("corpus.noise must lie in [0, 1)")
        codes = {lang.code for lang in self.languages}
        for code in [c for c, _ in self.families] + list(self.reorder) + list(self.identity):
            if code not in codes:
                raise ConfigError(f"corpus refers to unknown language {code!r}")

    @property
    def max_sentence_len(self) -> int:
        return self.max_len + (1 if self.affix else 0)


@dataclass
class Grammar:
    table: np.ndarray  # base token -> vocabulary id
    affix: int | None
    reorder: bool

    def realize(self, meaning: Sequence[int]) -> tuple[int, ...]:
        toks = [int(self.table[m]) for m in meaning]
        if self.reorder:
            for i in range(0, len(toks) - 1, 2):
                toks[i], toks[i + 1] = toks[i + 1], toks[i]
        if self.affix is not None:
            toks.append(self.affix)
        return tuple(toks)

    def decode(self, sentence: Sequence[int]) -> tuple[int, ...]:
        toks = list(sentence)
        if self.affix is not None:
            if not toks or toks[-1] != self.affix:
                raise ValueError("sentence does not end with the language affix")
            toks = toks[:-1]
        if self.reorder:
            for i in range(0, len(toks) - 1, 2):
                toks[i], toks[i + 1] = toks[i + 1], toks[i]
        inverse = {int(t): b for b, t in enumerate(self.table)}
        return tuple(inverse[t] for t in toks)


@dataclass
class ParallelCorpus:
    spec: CorpusSpec
    grammars: dict[str, Grammar]
    lang_tokens: dict[str, int]
    vocab_size: int
    meanings: list[tuple[int, ...]]
    sets: list[dict[str, tuple[int, ...]]]
    train_ids: list[int]
    test_ids: list[int]

    @property
    def languages(self) -> list[LanguageSpec]:
        return list(self.spec.languages)

    def language(self, code: str) -> LanguageSpec:
        for lang in self.spec.languages:
            if lang.code == code:
                return lang
        raise KeyError(code)

    def to_text(self) -> str:
        lines = []
        for sid, sset in enumerate(self.sets):
            for lang in self.spec.languages:
                toks = " ".join(str(t) for t in sset[lang.code])
                lines.append(f"{sid}\t{lang.code}\t{toks}")
        return "\n".join(lines) + "\n"

    def checksum(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()


def generate_corpus(spec: CorpusSpec, seed: int) -> ParallelCorpus:
    langs = list(spec.languages)
    n = len(langs)
    lang_tokens = {lang.code: NUM_SPECIAL + i for i, lang in enumerate(langs)}
    base_offset = NUM_SPECIAL + n
    width = spec.base_vocab + 1
    own_offset = {lang.code: base_offset + spec.base_vocab + i * width for i, lang in enumerate(langs)}
    vocab_size = base_offset + spec.base_vocab + n * width
    if spec.vocab_limit is not None and vocab_size > spec.vocab_limit:
        raise ConfigError(f"corpus needs {vocab_size} vocabulary ids but vocab_limit is {spec.vocab_limit}")

    family_of = dict(spec.families)
    roots: dict[str, np.ndarray] = {}
    grammars: dict[str, Grammar] = {}
    for lang in langs:
        code = lang.code
        if code in spec.identity:
            grammars[code] = Grammar(np.arange(base_offset, base_offset + spec.base_vocab), None, False)
            continue
        rng = derive_rng(seed, "grammar", code)
        table = own_offset[code] + rng.permutation(spec.base_vocab)
        fam = family_of.get(code)
        if fam is not None:
            if fam in roots:
                share = rng.random(spec.base_vocab) < spec.family_shared_fraction
                table = np.where(share, roots[fam], table)
            else:
                roots[fam] = table
        affix = own_offset[code] + spec.base_vocab if spec.affix else None
        grammars[code] = Grammar(table.astype(np.int64), affix, code in spec.reorder)

    rng = derive_rng(seed, "meanings")
    meanings, sets = [], []
    for _ in range(spec.num_sets):
        length = int(rng.integers(spec.min_len, spec.max_len + 1))
        meaning = tuple(int(t) for t in rng.integers(0, spec.base_vocab, size=length))
        meanings.append(meaning)
        sets.append({lang.code: grammars[lang.code].realize(meaning) for lang in langs})

    order = derive_rng(seed, "split").permutation(spec.num_sets)
    n_test = int(round(spec.test_fraction * spec.num_sets))
    test_ids = sorted(int(i) for i in order[:n_test])
    train_ids = sorted(int(i) for i in order[n_test:])
    if spec.noise > 0:
        for sid in train_ids:
            for lang in langs:
                sets[sid][lang.code] = _corrupt(sets[sid][lang.code], grammars[lang.code], spec.noise, derive_rng(seed, "noise", sid, lang.code))
    return ParallelCorpus(spec, grammars, lang_tokens, vocab_size, meanings, sets, train_ids, test_ids)


def _corrupt(sentence: tuple[int, ...], grammar: Grammar, rate: float, rng: np.random.Generator) -> tuple[int, ...]:
    """Swap content tokens for random ones from the same language; the affix is kept."""
    toks = list(sentence)
    body = len(toks) - (1 if grammar.affix is not None else 0)
    hit = rng.random(body) < rate
    picks = rng.integers(0, len(grammar.table), size=body)
    for i in np.flatnonzero(hit):
        toks[i] = int(grammar.table[picks[i]])
    return tuple(toks)


# ---------------------------------------------------------------------------
# datasets


@dataclass(frozen=True)
class TranslationPair:
    src_lang: str
    tgt_lang: str
    x: tuple[int, ...]
    y: tuple[int, ...]
    set_id: int = -1

    def __post_init__(self):
        if self.src_lang == self.tgt_lang:
            raise ValueError("source and target language must differ")

    @property
    def direction(self) -> str:
        return f"{self.src_lang}-{self.tgt_lang}"


def bucket_of(src: LanguageSpec, tgt: LanguageSpec) -> str:
    return f"{RESOURCE_ABBREV[src.resource_type]}2{RESOURCE_ABBREV[tgt.resource_type]}"


def all_directions(codes: Iterable[str]) -> list[tuple[str, str]]:
    codes = list(codes)
    return [(s, t) for s in codes for t in codes if s != t]


def apportion(total: int, weights: Sequence[float]) -> list[int]:
    """Largest-remainder allocation of ``total`` items proportional to ``weights``.

    Quotas are exact rationals, so equal remainders really tie; ties go to the
    lower index.
    """
    if total < 0 or any(w < 0 for w in weights):
        raise ValueError("apportion needs non-negative total and weights")
    fw = [Fraction(w) for w in weights]
    wsum = sum(fw)
    if wsum == 0:
        if total:
            raise ValueError("cannot allocate a positive total over zero weights")
        return [0] * len(fw)
    quotas = [total * w / wsum for w in fw]
    base = [math.floor(q) for q in quotas]
    left = total - sum(base)
    rema = sorted(range(len(fw)), key=lambda i: (-(quotas[i] - base[i]), i))
    for i in rema[:left]:
        base[i] += 1
    return base


def _cycler(ids: Sequence[int], rng: np.random.Generator):
    ids = list(ids)
    while True:
        for j in rng.permutation(len(ids)):
            yield ids[int(j)]


def build_dataset(
    corpus: ParallelCorpus,
    directions: Iterable[tuple[str, str]] | None = None,
    sampling: str = "balanced",
    *,
    split: str = "train",
    total_pairs: int | None = None,
    pairs_per_direction: int | None = None,
    seed: int = 0,
) -> list[TranslationPair]:
    """Many-to-many pairs from one split of the corpus.

    ``balanced`` gives each direction the same count. ``imbalanced`` hands each
    language a budget proportional to its corpus size; the budget is spread over
    partner languages proportionally to their sizes and split evenly between
    the two orientations.
    """
    codes = [lang.code for lang in corpus.spec.languages]
    allowed = list(directions) if directions is not None else all_directions(codes)
    if not allowed:
        raise ConfigError("dataset needs at least one direction")
    for s, t in allowed:
        if s not in codes or t not in codes or s == t:
            raise ConfigError(f"invalid direction {s}->{t}")
    set_ids = corpus.train_ids if split == "train" else corpus.test_ids
    if not set_ids:
        raise ConfigError(f"{split} split is empty")

    counts: dict[tuple[str, str], int] = {}
    if sampling == "balanced":
        per = len(set_ids) if pairs_per_direction is None else pairs_per_direction
        counts = {d: per for d in allowed}
    elif sampling == "imbalanced":
        sizes = {lang.code: lang.corpus_size for lang in corpus.spec.languages}
        total = sum(sizes.values()) if total_pairs is None else total_pairs
        if total > sum(sizes.values()):
            raise ConfigError("total_pairs exceeds the summed corpus sizes")
        budgets = dict(zip(codes, apportion(total, [sizes[c] for c in codes])))
        allowed_set = set(allowed)
        for owner in codes:
            partners = [t for t in codes if t != owner and ((owner, t) in allowed_set or (t, owner) in allowed_set)]
            weights = [sizes[t] for t in partners]
            if budgets[owner] == 0 or not partners or sum(weights) == 0:
                continue
            for t, c in zip(partners, apportion(budgets[owner], weights)):
                fwd, bwd = (owner, t) in allowed_set, (t, owner) in allowed_set
                n_fwd = c if not bwd else (0 if not fwd else (c + 1) // 2)
                counts[(owner, t)] = counts.get((owner, t), 0) + n_fwd
                counts[(t, owner)] = counts.get((t, owner), 0) + (c - n_fwd)
    else:
        raise ConfigError(f"unknown sampling {sampling!r}")

    pairs = []
    for s, t in sorted(counts):
        c = counts[(s, t)]
        if c <= 0:
            continue
        picker = _cycler(set_ids, derive_rng(seed, "dataset", split, sampling, s, t))
        for _ in range(c):
            sid = next(picker)
            pairs.append(TranslationPair(s, t, corpus.sets[sid][s], corpus.sets[sid][t], sid))
    return pairs


def heldout_pairs(corpus: ParallelCorpus, directions: Iterable[tuple[str, str]] | None = None) -> list[TranslationPair]:
    codes = [lang.code for lang in corpus.spec.languages]
    dirs = list(directions) if directions is not None else all_directions(codes)
    return [
        TranslationPair(s, t, corpus.sets[sid][s], corpus.sets[sid][t], sid)
        for s, t in dirs
        for sid in corpus.test_ids
    ]


def group_by_direction(pairs: Iterable[TranslationPair]) -> dict[tuple[str, str], list[TranslationPair]]:
    out: dict[tuple[str, str], list[TranslationPair]] = {}
    for p in pairs:
        out.setdefault((p.src_lang, p.tgt_lang), []).append(p)
    return out


def _pad(rows: list[list[int]]) -> np.ndarray:
    width = max(len(r) for r in rows)
    arr = np.full((len(rows), width), PAD_ID, dtype=np.int64)
    for i, r in enumerate(rows):
        arr[i, : len(r)] = r
    return arr


def encode_source(corpus: ParallelCorpus, pairs: Sequence[TranslationPair]) -> np.ndarray:
    return _pad([[corpus.lang_tokens[p.src_lang], *p.x, EOS_ID] for p in pairs])


def encode_batch(corpus: ParallelCorpus, pairs: Sequence[TranslationPair]):
    """(encoder ids, decoder input ids, decoder target ids), PAD-filled."""
    src = encode_source(corpus, pairs)
    dec_in = _pad([[corpus.lang_tokens[p.tgt_lang], *p.y] for p in pairs])
    dec_out = _pad([[*p.y, EOS_ID] for p in pairs])
    return src, dec_in, dec_out


def manifest(corpus: ParallelCorpus, datasets: dict[str, list[TranslationPair]]) -> dict:
    out = {
        "format_version": 1,
        "corpus_sha256": corpus.checksum(),
        "vocab_size": corpus.vocab_size,
        "languages": [
            {"code": l.code, "resource_type": l.resource_type, "corpus_size": l.corpus_size}
            for l in corpus.spec.languages
        ],
        "splits": {"train": corpus.train_ids, "test": corpus.test_ids},
        "datasets": {},
    }
    for name, pairs in datasets.items():
        counts: dict[str, int] = {}
        for p in pairs:
            counts[p.direction] = counts.get(p.direction, 0) + 1
        out["datasets"][name] = {"total": len(pairs), "directions": dict(sorted(counts.items()))}
    return out


def manifest_json(m: dict) -> str:
    return json.dumps(m, indent=1, sort_keys=True) + "\n"
