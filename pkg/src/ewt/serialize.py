"""``.ewt`` weight files.

Layout: UTF-8 manifest, one ``\\0`` byte, raw little-endian blob, 4-byte
little-endian CRC32 of the blob.  Manifest lines are
``name dtype d0,d1,... offset``; lines starting with ``#`` carry metadata
(the model config as JSON) and are ignored by plain readers.
"""

from __future__ import annotations

import json
import os
import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import ChecksumError, LoadError, NameSetMismatchError, ShapeMismatchError
from .model import Model, ModelConfig, build

FORMAT_TAG = "ewt-weights 1"
_DTYPES = {"float32": "<f4", "float64": "<f8"}


def save(m: Model, path: str | os.PathLike) -> None:
    lines = [f"# {FORMAT_TAG}", "# config " + json.dumps(m.config.to_dict(), sort_keys=True)]
    if m.branches != ("conv", "trans"):
        lines.append("# branches " + ",".join(m.branches))
    chunks = []
    offset = 0
    for name, p in m.named_parameters():
        dtype = p.dtype.name
        raw = np.ascontiguousarray(p.data, dtype=_DTYPES[dtype]).tobytes()
        lines.append(f"{name} {dtype} {','.join(str(n) for n in p.shape)} {offset}")
        chunks.append(raw)
        offset += len(raw)
    blob = b"".join(chunks)
    payload = ("\n".join(lines) + "\n").encode("utf-8") + b"\0" + blob + struct.pack("<I", zlib.crc32(blob))
    Path(path).write_bytes(payload)


def _parse(path: str | os.PathLike):
    data = Path(path).read_bytes()
    sep = data.find(b"\0")
    if sep < 0 or len(data) < sep + 5:
        raise LoadError(f"{path}: not an .ewt weight file")
    blob = data[sep + 1 : -4]
    (crc,) = struct.unpack("<I", data[-4:])
    if zlib.crc32(blob) != crc:
        raise ChecksumError(f"{path}: CRC32 mismatch, file is corrupted")
    meta: dict[str, str] = {}
    entries = {}
    for line in data[:sep].decode("utf-8").splitlines():
        if not line.strip():
            continue
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition(" ")
            meta[key] = value
            continue
        try:
            name, dtype, dims, offset = line.split()
            shape = tuple(int(d) for d in dims.split(",") if d)
            entries[name] = (dtype, shape, int(offset))
        except ValueError:
            raise LoadError(f"{path}: malformed manifest line {line!r}") from None
    return meta, entries, blob


def read_config(path: str | os.PathLike) -> ModelConfig:
    meta, _, _ = _parse(path)
    if "config" not in meta:
        raise LoadError(f"{path}: no embedded config; pass one explicitly")
    return ModelConfig.from_dict(json.loads(meta["config"]))


def load(config: ModelConfig | None, path: str | os.PathLike) -> Model:
    """Rebuild a model from ``path``.  ``config=None`` uses the embedded one."""
    meta, entries, blob = _parse(path)
    if config is None:
        if "config" not in meta:
            raise LoadError(f"{path}: no embedded config; pass one explicitly")
        config = ModelConfig.from_dict(json.loads(meta["config"]))
    branches = tuple(meta["branches"].split(",")) if "branches" in meta else ("conv", "trans")
    m = build(config, 0, branches)
    params = dict(m.named_parameters())
    if set(params) != set(entries):
        missing = sorted(set(params) - set(entries))[:5]
        extra = sorted(set(entries) - set(params))[:5]
        raise NameSetMismatchError(f"{path}: parameter names differ from config (missing {missing}, unexpected {extra})")
    for name, p in params.items():
        dtype, shape, offset = entries[name]
        if shape != p.shape:
            raise ShapeMismatchError(f"{path}: {name} has shape {shape}, config expects {p.shape}")
        if dtype not in _DTYPES:
            raise LoadError(f"{path}: unsupported dtype {dtype} for {name}")
        count = int(np.prod(shape))
        arr = np.frombuffer(blob, dtype=_DTYPES[dtype], count=count, offset=offset)
        p.data = arr.reshape(shape).astype(dtype)
    return m
