"""Pooling decoder hidden states into text embeddings."""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from . import tensor as T
from .bridge import AssembledBatch, AssembledInput
from .tensor import Tensor


class PoolingMode(str, Enum):
    CONCAT_CTX_EOS = "concat_ctx_eos"
    LAST_TOKEN = "last_token"
    MEAN = "mean"
    WEIGHTED_MEAN = "weighted_mean"
    BI_EOS = "bi_eos"

    @property
    def doubles_width(self) -> bool:
        return self in (PoolingMode.CONCAT_CTX_EOS, PoolingMode.BI_EOS)

    def output_dim(self, d: int) -> int:
        return 2 * d if self.doubles_width else d


@dataclass
class EmbeddingRecord:
    vector: Tensor  # (1, D)
    normalized: bool
    mode: PoolingMode

    @property
    def dim(self) -> int:
        return self.vector.shape[-1]


def _row_weights(lengths: np.ndarray, L: int, weighted: bool) -> np.ndarray:
    pos = np.arange(L)[None, :]
    keep = pos < lengths[:, None]
    w = np.where(keep, (pos + 1.0) if weighted else 1.0, 0.0)
    return w / w.sum(axis=1, keepdims=True)


def pool_batch(states: Tensor, batch: AssembledBatch, mode: PoolingMode | str,
               bridge_c: Tensor | None = None, normalize: bool = True) -> Tensor:
    """Embeddings ``(B, D)`` from batched states ``(B, L, d)``.

    With several Contextual tokens the Contextual half is the mean of their
    rows. ``bridge_c`` (``(B, d)`` or ``(B, count, d)``) is the projected
    encoder output and is required for ``bi_eos``.
    """
    mode = PoolingMode(mode)
    eos = T.gather_rows(states, batch.eos_index)
    if mode is PoolingMode.LAST_TOKEN:
        out = eos
    elif mode in (PoolingMode.MEAN, PoolingMode.WEIGHTED_MEAN):
        w = _row_weights(batch.lengths, states.shape[1], mode is PoolingMode.WEIGHTED_MEAN)
        out = T.weighted_rows(states, w)
    elif mode is PoolingMode.CONCAT_CTX_EOS:
        ctx_idx = batch.ctx_index
        if ctx_idx.shape[1] == 0:
            raise ValueError("concat_ctx_eos pooling needs a Contextual token in the input")
        ctx = T.gather_rows(states, ctx_idx)
        ctx = ctx.mean(axis=1) if ctx_idx.shape[1] > 1 else ctx.reshape(ctx.shape[0], ctx.shape[2])
        out = T.concat([ctx, eos], axis=-1)
    else:
        if bridge_c is None:
            raise ValueError("bi_eos pooling requires the projected encoder output (bridge_c)")
        c = bridge_c.mean(axis=1) if bridge_c.ndim == 3 else bridge_c
        out = T.concat([c, eos], axis=-1)
    return T.l2_normalize(out) if normalize else out


def pool(states: Tensor, inp: AssembledInput, mode: PoolingMode | str,
         bridge_c: Tensor | None = None) -> EmbeddingRecord:
    """Pool one sequence's ``(rows, d)`` states into a unit-norm record."""
    mode = PoolingMode(mode)
    if mode is PoolingMode.BI_EOS and bridge_c is None:
        raise ValueError("bi_eos pooling requires the projected encoder output (bridge_c)")
    batch = AssembledBatch(inp.x.reshape((1,) + inp.x.shape), [inp.layout])
    c = None
    if bridge_c is not None:
        c = bridge_c.reshape((1,) + bridge_c.shape) if bridge_c.ndim == 2 else bridge_c
    vec = pool_batch(states.reshape((1,) + states.shape), batch, mode, c)
    return EmbeddingRecord(vec, True, mode)


def l2_norms(states: Tensor, inp: AssembledInput) -> tuple[float, float]:
    """Euclidean norms of the (first) Contextual row and the EOS row."""
    data = states.data if isinstance(states, Tensor) else np.asarray(states)
    ctx_row = data[inp.ctx_span[0]]
    return float(np.linalg.norm(ctx_row)), float(np.linalg.norm(data[inp.eos_index]))


def cosine(a: EmbeddingRecord, b: EmbeddingRecord) -> float:
    return float(np.dot(a.vector.data.ravel(), b.vector.data.ravel()))


def write_embeddings(path, vectors: np.ndarray, mode: str, normalized: bool = True) -> Path:
    """Write little-endian f32 rows plus a ``.json`` sidecar; returns the sidecar path."""
    vectors = np.ascontiguousarray(vectors, dtype="<f4")
    if vectors.ndim != 2:
        raise ValueError("embeddings must be a 2-d array")
    path = Path(path)
    path.write_bytes(vectors.tobytes())
    sidecar = path.with_name(path.name + ".json")
    sidecar.write_text(json.dumps({"dim": int(vectors.shape[1]), "count": int(vectors.shape[0]),
                                   "normalized": bool(normalized), "mode": str(mode)}) + "\n")
    return sidecar


def read_embeddings(path) -> tuple[np.ndarray, dict]:
    path = Path(path)
    meta = json.loads(path.with_name(path.name + ".json").read_text())
    data = np.frombuffer(path.read_bytes(), dtype="<f4")
    if data.size != meta["dim"] * meta["count"]:
        raise ValueError(f"{path}: payload size does not match sidecar dim x count")
    return data.reshape(meta["count"], meta["dim"]), meta
