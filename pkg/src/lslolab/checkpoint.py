"""Tensor container files: magic, header length, JSON header, float64 payload.

Layout::

    b"LSLOCKPT" | uint64 LE header length | UTF-8 JSON header | payload

The header carries ``format_version``, ``model_config``, a ``tensors``
manifest of ``{name, shape, offset}`` (byte offsets into the payload) and an
optional free-form ``metadata`` object. The payload is the tensors'
little-endian float64 values in manifest order.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"LSLOCKPT"
FORMAT_VERSION = 1


def dumps(tensors: dict[str, np.ndarray], model_config: dict, metadata: dict | None = None) -> bytes:
    manifest = []
    chunks = []
    offset = 0
    for name, arr in tensors.items():
        raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        manifest.append({"name": name, "shape": list(np.shape(arr)), "offset": offset})
        chunks.append(raw)
        offset += len(raw)
    header = {"format_version": FORMAT_VERSION, "model_config": model_config, "tensors": manifest}
    if metadata is not None:
        header["metadata"] = metadata
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<Q", len(hbytes)) + hbytes + b"".join(chunks)


def loads(blob: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    if blob[:8] != MAGIC:
        raise ValueError("not a checkpoint file (bad magic)")
    (hlen,) = struct.unpack("<Q", blob[8:16])
    header = json.loads(blob[16 : 16 + hlen].decode("utf-8"))
    if header.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format {header.get('format_version')}")
    payload = memoryview(blob)[16 + hlen :]
    tensors = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arr = np.frombuffer(payload[start : start + 8 * count], dtype="<f8").astype(np.float64)
        tensors[entry["name"]] = arr.reshape(shape)
    return header, tensors


def save(path, tensors: dict[str, np.ndarray], model_config: dict, metadata: dict | None = None) -> None:
    Path(path).write_bytes(dumps(tensors, model_config, metadata))


def load(path) -> tuple[dict, dict[str, np.ndarray]]:
    return loads(Path(path).read_bytes())
