"""Seeded generators split by label, so every consumer draws from its own stream."""

import hashlib

import numpy as np


def _label_words(label: str) -> list[int]:
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    return [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]


def derive_rng(seed: int, *labels: str) -> np.random.Generator:
    """PCG64 generator keyed by ``seed`` and a path of string labels."""
    entropy = [int(seed) & 0xFFFFFFFF, (int(seed) >> 32) & 0xFFFFFFFF]
    for label in labels:
        entropy.extend(_label_words(str(label)))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
