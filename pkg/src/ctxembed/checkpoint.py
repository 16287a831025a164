"""Binary checkpoint container.

Layout (all integers little-endian)::

    b"CTXCKPT\\0"            8-byte magic
    u32 format_version
    u64 header_len
    header_len bytes         UTF-8 JSON header
    payload                  tensors back to back, in header order

The header lists one ``{name, dtype, shape, byte_offset, nbytes, crc32}``
record per tensor in payload order (offsets relative to the payload start) and carries ``meta``: the
model config, the tokenizer fingerprint and the format version.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .config import ModelConfig
from .model import EmbeddingModel
from .tensor import ShapeError

MAGIC = b"CTXCKPT\0"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


class CheckpointError(ValueError):
    pass


class IncompatibleCheckpointError(CheckpointError):
    """The file was written by a different format version."""


class IntegrityError(CheckpointError):
    """The payload is truncated or a tensor checksum does not match."""


def save_checkpoint(model: EmbeddingModel, path, tokenizer=None, extra: dict | None = None) -> None:
    tensors = []
    blobs = []
    offset = 0
    for name, p in model.named_parameters():
        data = np.ascontiguousarray(p.data, dtype=p.data.dtype.newbyteorder("<"))
        raw = data.tobytes()
        tensors.append({"name": name, "dtype": data.dtype.str, "shape": list(data.shape), "byte_offset": offset,
                         "nbytes": len(raw), "crc32": zlib.crc32(raw)})
        blobs.append(raw)
        offset += len(raw)
    meta = {"format_version": FORMAT_VERSION, "model_config": model.config.to_dict(),
            "tokenizer_hash": tokenizer.fingerprint() if tokenizer is not None else None,
            "extra": extra or {}}
    header = json.dumps({"meta": meta, "tensors": tensors}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, FORMAT_VERSION, len(header)))
        fh.write(header)
        for raw in blobs:
            fh.write(raw)


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Validate the container and return ``(meta, {name: array})``."""
    buf = Path(path).read_bytes()
    if len(buf) < _PREFIX.size:
        raise IntegrityError(f"{path}: file too short for a checkpoint header")
    magic, version, hlen = _PREFIX.unpack_from(buf)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    if version != FORMAT_VERSION:
        raise IncompatibleCheckpointError(
            f"{path}: checkpoint format version {version}, this build reads version {FORMAT_VERSION}")
    start = _PREFIX.size + hlen
    if len(buf) < start:
        raise IntegrityError(f"{path}: truncated header")
    try:
        header = json.loads(buf[_PREFIX.size:start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise IntegrityError(f"{path}: corrupt header ({exc})") from exc
    payload = memoryview(buf)[start:]
    arrays = {}
    expected = 0
    for info in header["tensors"]:
        name = info["name"]
        lo, n = info["byte_offset"], info["nbytes"]
        if lo != expected:
            raise IntegrityError(f"{path}: tensor {name} offset {lo} breaks header order")
        expected = lo + n
        if lo + n > len(payload):
            raise IntegrityError(f"{path}: payload truncated inside tensor {name}")
        raw = bytes(payload[lo:lo + n])
        if zlib.crc32(raw) != info["crc32"]:
            raise IntegrityError(f"{path}: checksum mismatch for tensor {name}")
        arrays[name] = np.frombuffer(raw, dtype=np.dtype(info["dtype"])).reshape(info["shape"]).copy()
    if expected != len(payload):
        raise IntegrityError(f"{path}: {len(payload) - expected} trailing payload bytes")
    return header["meta"], arrays


def load_checkpoint(path, config: ModelConfig | None = None) -> EmbeddingModel:
    """Rebuild the model described in the checkpoint (or ``config``) and load its weights."""
    meta, arrays = read_checkpoint(path)
    cfg = config if config is not None else ModelConfig.from_dict(meta["model_config"])
    model = EmbeddingModel(cfg)
    params = dict(model.named_parameters())
    missing = sorted(set(params) - set(arrays))
    unexpected = sorted(set(arrays) - set(params))
    if missing or unexpected:
        raise ShapeError(f"checkpoint tensors do not match the model: missing {missing[:5]}, "
                         f"unexpected {unexpected[:5]}")
    for name, p in params.items():
        arr = arrays[name]
        if arr.shape != p.shape:
            raise ShapeError(f"tensor {name}: checkpoint shape {arr.shape} vs model shape {p.shape}")
        p.data = arr.astype(p.data.dtype, copy=False)
    model._checkpoint_meta = meta
    return model
