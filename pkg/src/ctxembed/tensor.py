"""Dense tensors with reverse-mode automatic differentiation.

Every differentiable op records its parents and a closure that maps the
output gradient to input gradients. ``Tensor.backward`` walks the recorded
graph in reverse topological order.

Broadcasting is deliberately narrow: elementwise binary ops accept either
equal shapes, a python scalar, or a right operand whose shape equals the
trailing dimensions of the left operand (bias-add over rows).
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf

__all__ = [
    "Tensor",
    "ShapeError",
    "EmptyPoolError",
    "no_grad",
    "is_grad_enabled",
    "matmul",
    "gelu",
    "softmax",
    "log_softmax",
    "layer_norm",
    "mean_pool",
    "concat",
    "gather_rows",
    "scatter_rows",
    "weighted_rows",
    "take",
    "l2_normalize",
]

_DTYPES = {"f32": np.float32, "f64": np.float64}
_GRAD_ENABLED = True


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class EmptyPoolError(ValueError):
    """Raised when pooling is asked to average over zero rows."""


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference mode)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


def _resolve_dtype(dtype):
    if dtype is None:
        return None
    if isinstance(dtype, str):
        return _DTYPES[dtype]
    return np.dtype(dtype).type


class Tensor:
    """An n-d array plus an optional gradient buffer.

    ``requires_grad`` marks a tensor whose gradient should be populated by
    :meth:`backward`. Leaf gradients accumulate across backward calls until
    :meth:`zero_grad` is called.
    """

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        dt = _resolve_dtype(dtype)
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if dt is not None:
            arr = arr.astype(dt, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

    # ------------------------------------------------------------------ basics
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    # --------------------------------------------------------------- autodiff
    def backward(self, grad: np.ndarray | None = None) -> None:
        """Populate ``.grad`` on every reachable tensor that requires grad."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError(f"backward() needs a scalar loss, got shape {self.shape}")
            grad = np.ones_like(self.data)
        order = _topo_order(self)
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad and node.is_leaf:
                node.grad = g.copy() if node.grad is None else node.grad + g
            if node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    # -------------------------------------------------------------- operators
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, -other if not isinstance(other, Tensor) else neg(other))

    def __rsub__(self, other):
        return add(neg(self), other)

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, reciprocal(other))
        return mul(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return index(self, idx)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def _wrap(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dt = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dt) if dt is not None else x)


def _make(data: np.ndarray, parents: Iterable[Tensor], backward) -> Tensor:
    if not np.isfinite(data).all():
        raise FloatingPointError("non-finite value produced by tensor op")
    parents = tuple(parents)
    out = Tensor(data, dtype=data.dtype)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _check_dtypes(a: Tensor, b: Tensor, op: str) -> None:
    if a.dtype != b.dtype:
        raise TypeError(f"{op}: dtype mismatch {a.dtype.name} vs {b.dtype.name}")


def _check_bias_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape == b.shape or b.ndim == 0:
        return
    if b.ndim <= a.ndim and a.shape[a.ndim - b.ndim:] == b.shape:
        return
    raise ShapeError(f"{op}: cannot combine shapes {a.shape} and {b.shape}")


def _unbias(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    return g.reshape((-1,) + shape).sum(axis=0) if lead else g


# ---------------------------------------------------------------- elementwise
def add(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a, b = b, a
    b_is_scalar = not isinstance(b, Tensor)
    b = _wrap(b, a)
    if not b_is_scalar:
        _check_dtypes(a, b, "add")
    _check_bias_shape(a, b, "add")

    def backward(g):
        return g, _unbias(g, b.shape)

    return _make(a.data + b.data, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a, b = b, a
    if not isinstance(b, Tensor):
        s = b
        return _make(a.data * a.dtype.type(s), (a,), lambda g: (g * a.dtype.type(s),))
    _check_dtypes(a, b, "mul")
    _check_bias_shape(a, b, "mul")

    def backward(g):
        return g * b.data, _unbias(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), backward)


def reciprocal(a: Tensor) -> Tensor:
    with np.errstate(divide="ignore"):
        out = 1.0 / a.data
    return _make(out, (a,), lambda g: (-g * out * out,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)
    return _make(out, (a,), lambda g: (g / a.data,))


def sqrt(a: Tensor) -> Tensor:
    with np.errstate(invalid="ignore"):
        out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (g * 0.5 / out,))


def gelu(x: Tensor) -> Tensor:
    """Exact GELU, ``x * Phi(x)`` with the erf-based normal CDF."""
    xd = x.data
    cdf = 0.5 * (1.0 + erf(xd / math.sqrt(2.0)))
    out = (xd * cdf).astype(xd.dtype, copy=False)

    def backward(g):
        pdf = np.exp(-0.5 * xd * xd) / math.sqrt(2.0 * math.pi)
        return ((g * (cdf + xd * pdf)).astype(xd.dtype, copy=False),)

    return _make(out, (x,), backward)


# ----------------------------------------------------------------- reductions
def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(np.asarray(out), (a,), backward)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / float(n))


# -------------------------------------------------------------------- shaping
def reshape(a: Tensor, shape) -> Tensor:
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def index(a: Tensor, idx) -> Tensor:
    out = a.data[idx]

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)

    return _make(np.array(out), (a,), backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    for t in tensors[1:]:
        _check_dtypes(tensors[0], t, "concat")
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return np.split(g, splits, axis=axis)

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def take(table: Tensor, ids) -> Tensor:
    """Embedding lookup: rows of a 2-d ``table`` selected by integer ``ids``."""
    ids = np.asarray(ids, dtype=np.int64)

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, table.shape[-1]))
        return (full,)

    return _make(table.data[ids], (table,), backward)


def gather_rows(x: Tensor, idx) -> Tensor:
    """Select ``x[b, idx[b, ...]]`` along axis 1 of a ``(B, L, d)`` tensor.

    ``idx`` is an integer array of shape ``(B,)`` or ``(B, m)``; the result has
    shape ``(B, d)`` or ``(B, m, d)``.
    """
    idx = np.asarray(idx, dtype=np.int64)
    if x.ndim != 3 or idx.shape[0] != x.shape[0]:
        raise ShapeError(f"gather_rows: bad shapes {x.shape} / {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[1]):
        raise IndexError(f"gather_rows: index out of range for length {x.shape[1]}")
    b = np.arange(x.shape[0]).reshape((-1,) + (1,) * (idx.ndim - 1))
    b = np.broadcast_to(b, idx.shape)

    def backward(g):
        full = np.zeros_like(x.data)
        np.add.at(full, (b, idx), g)
        return (full,)

    return _make(x.data[b, idx], (x,), backward)


def scatter_rows(base: Tensor, rows: Tensor, pos) -> Tensor:
    """Overwrite rows of ``base`` ``(B, L, d)`` with ``rows`` ``(B, m, d)`` at ``pos`` ``(B, m)``."""
    pos = np.asarray(pos, dtype=np.int64)
    if base.ndim != 3 or rows.ndim != 3 or pos.shape != rows.shape[:2] or rows.shape[0] != base.shape[0]:
        raise ShapeError(f"scatter_rows: base {base.shape}, rows {rows.shape}, pos {pos.shape}")
    _check_dtypes(base, rows, "scatter_rows")
    b = np.broadcast_to(np.arange(base.shape[0])[:, None], pos.shape)
    out = base.data.copy()
    out[b, pos] = rows.data

    def backward(g):
        gb = g.copy()
        gb[b, pos] = 0.0
        return gb, g[b, pos]

    return _make(out, (base, rows), backward)


# -------------------------------------------------------------- linear algebra
def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes (leading axes must agree)."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul: batch dims differ {a.shape} vs {b.shape}")
    if b.ndim > a.ndim:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    _check_dtypes(a, b, "matmul")

    flat = b.ndim == 2 and a.ndim > 2  # fold leading axes into one gemm

    def mm(x, y):
        if flat:
            return (x.reshape(-1, x.shape[-1]) @ y).reshape(x.shape[:-1] + (y.shape[-1],))
        return x @ y

    def backward(g):
        ga = mm(g, b.data.T) if flat else g @ np.swapaxes(b.data, -1, -2)
        if flat:
            gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.swapaxes(a.data, -1, -2) @ g
        return ga, gb

    if a.dtype == np.float32:
        # f64 accumulation: a row's result no longer depends on how many rows BLAS sees
        out = mm(a.data.astype(np.float64), b.data.astype(np.float64)).astype(np.float32)
    else:
        out = mm(a.data, b.data)
    return _make(out, (a, b), backward)


def softmax(x: Tensor, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Max-subtracted softmax; entries where ``mask`` is False get exactly 0.

    Every slice must keep at least one unmasked entry.
    """
    xd = x.data
    if mask is not None:
        mask = np.broadcast_to(mask, xd.shape)
        xd = np.where(mask, xd, -np.inf)
    m = np.max(xd, axis=axis, keepdims=True)
    e = np.exp(xd - m)
    # f64 accumulation keeps a row's normaliser independent of how many masked zeros trail it
    out = (e / e.sum(axis=axis, keepdims=True, dtype=np.float64)).astype(x.dtype)

    def backward(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return _make(out.astype(x.dtype, copy=False), (x,), backward)


def log_softmax(x: Tensor, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Log-softmax; masked entries are reported as 0 and get no gradient."""
    xd = x.data
    if mask is not None:
        mask = np.broadcast_to(mask, xd.shape)
        xm = np.where(mask, xd, -np.inf)
    else:
        xm = xd
    m = np.max(xm, axis=axis, keepdims=True)
    shifted = xm - m
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True, dtype=np.float64)).astype(xd.dtype)
    out = shifted - lse
    probs = np.exp(out)
    if mask is not None:
        out = np.where(mask, out, 0.0)

    def backward(g):
        if mask is not None:
            g = np.where(mask, g, 0.0)
        return (g - probs * g.sum(axis=axis, keepdims=True),)

    return _make(out.astype(x.dtype, copy=False), (x,), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply ``gain`` and ``bias``."""
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm: gain/bias {gain.shape}/{bias.shape} vs width {d}")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    out = xhat * gain.data + bias.data

    def backward(g):
        gx_hat = g * gain.data
        gx = rstd * (gx_hat - gx_hat.mean(axis=-1, keepdims=True)
                     - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        lead = tuple(range(xd.ndim - 1))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _make(out.astype(x.dtype, copy=False), (x, gain, bias), backward)


def weighted_rows(x: Tensor, weights: np.ndarray) -> Tensor:
    """Per-batch weighted sum of rows: ``(B, L, d)`` with ``(B, L)`` weights -> ``(B, d)``."""
    w = np.asarray(weights, dtype=x.dtype)
    if x.ndim != 3 or w.shape != x.shape[:2]:
        raise ShapeError(f"weighted_rows: weights {w.shape} vs states {x.shape}")
    out = np.einsum("bl,bld->bd", w, x.data)
    return _make(out, (x,), lambda g: (w[:, :, None] * g[:, None, :],))


def mean_pool(x: Tensor, mask=None) -> Tensor:
    """Mean over unmasked rows of an ``(n, k)`` tensor, returned as ``(1, k)``.

    ``mask[i]`` True means row ``i`` is kept.
    """
    n = x.shape[0]
    keep = np.ones(n, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if keep.shape != (n,):
        raise ShapeError(f"mean_pool: mask length {keep.shape} vs {n} rows")
    if not keep.any():
        raise EmptyPoolError("mean_pool: every row is masked")
    w = keep.astype(x.dtype) / keep.sum()
    return weighted_rows(reshape(x, (1,) + x.shape), w[None, :])


def l2_normalize(x: Tensor, axis: int = -1, eps: float = 1e-12) -> Tensor:
    xd = x.data
    norm = np.sqrt((xd * xd).sum(axis=axis, keepdims=True))
    norm = np.maximum(norm, eps)
    out = xd / norm

    def backward(g):
        return ((g - out * (g * out).sum(axis=axis, keepdims=True)) / norm,)

    return _make(out, (x,), backward)
