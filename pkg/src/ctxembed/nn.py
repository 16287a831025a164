"""Transformer building blocks shared by the encoder and the decoder."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Tensor


class CapacityError(ValueError):
    """Raised when a sequence is longer than the positional table."""


class MaskMode(str, Enum):
    CAUSAL = "causal"
    BIDIRECTIONAL = "bidirectional"


@dataclass
class BlockConfig:
    d_model: int
    n_heads: int
    ffn_mult: int = 4
    max_positions: int = 512

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")


class Module:
    """Minimal parameter container.

    Parameters are ``Tensor`` attributes; sub-modules are ``Module`` attributes
    or lists of modules. Names follow the dotted attribute path.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, val in vars(self).items():
            if key.startswith("_"):
                continue
            name = f"{prefix}{key}"
            if isinstance(val, Tensor):
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
            elif isinstance(val, dict):
                for k, item in val.items():
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{k}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def set_requires_grad(self, flag: bool) -> None:
        for p in self.parameters():
            p.requires_grad = flag


def _init(rng: np.random.Generator, shape, fan_in: int, dtype) -> Tensor:
    return Tensor(rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=shape), requires_grad=True, dtype=dtype)


class LoraAdapter(Module):
    """Low-rank update ``(alpha / rank) * B @ A`` for one projection.

    ``B`` starts at zero so a fresh adapter leaves the wrapped layer unchanged.
    """

    def __init__(self, in_dim: int, out_dim: int, rank: int, alpha: float,
                 rng: np.random.Generator, dtype=np.float32, target: str = ""):
        if rank <= 0 or alpha <= 0:
            raise ValueError("LoRA rank and alpha must be positive")
        self.rank = rank
        self.alpha = float(alpha)
        self.target = target
        self.A = _init(rng, (rank, in_dim), in_dim, dtype)
        self.B = Tensor(np.zeros((out_dim, rank)), requires_grad=True, dtype=dtype)

    @property
    def scale(self) -> float:
        return self.alpha / self.rank

    def delta_weight(self) -> np.ndarray:
        return self.scale * (self.B.data @ self.A.data)


def lora_apply(base_out: Tensor, x: Tensor, adapter: LoraAdapter) -> Tensor:
    """Return ``base_out + scale * (x @ A.T) @ B.T``."""
    in_dim, out_dim = adapter.A.shape[1], adapter.B.shape[0]
    if x.shape[-1] != in_dim or base_out.shape[-1] != out_dim or base_out.shape[:-1] != x.shape[:-1]:
        raise T.ShapeError(
            f"lora_apply: x {x.shape}, base_out {base_out.shape}, A {adapter.A.shape}, B {adapter.B.shape}")
    low = T.matmul(x, adapter.A.T)
    return base_out + T.matmul(low, adapter.B.T) * adapter.scale


class Linear(Module):
    """``y = x @ W.T (+ b)`` with ``W`` stored as ``(out, in)``."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator,
                 bias: bool = True, dtype=np.float32):
        self.weight = _init(rng, (out_dim, in_dim), in_dim, dtype)
        self.bias = Tensor(np.zeros(out_dim), requires_grad=True, dtype=dtype) if bias else None
        self.lora: LoraAdapter | None = None

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    def add_lora(self, rank: int, alpha: float, rng: np.random.Generator, target: str = "") -> LoraAdapter:
        self.lora = LoraAdapter(self.in_dim, self.out_dim, rank, alpha, rng, self.weight.dtype.type, target)
        return self.lora

    def __call__(self, x: Tensor) -> Tensor:
        out = T.matmul(x, self.weight.T)
        if self.bias is not None:
            out = out + self.bias
        if self.lora is not None:
            out = lora_apply(out, x, self.lora)
        return out


class LayerNorm(Module):
    def __init__(self, dim: int, dtype=np.float32, eps: float = 1e-5):
        self.gain = Tensor(np.ones(dim), requires_grad=True, dtype=dtype)
        self.bias = Tensor(np.zeros(dim), requires_grad=True, dtype=dtype)
        self._eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gain, self.bias, self._eps)


def attention_mask(lengths, max_len: int, mode: MaskMode | str) -> np.ndarray:
    """Boolean ``(B, 1, L, L)`` mask; True where query i may attend to key j.

    Padding sits at the end of each row. Padded query rows keep a self-edge
    so their softmax stays well defined; their outputs are never read.
    """
    lengths = np.asarray(lengths)
    pos = np.arange(max_len)
    key_ok = pos[None, :] < lengths[:, None]
    mask = np.broadcast_to(key_ok[:, None, :], (len(lengths), max_len, max_len)).copy()
    if MaskMode(mode) is MaskMode.CAUSAL:
        mask &= np.tril(np.ones((max_len, max_len), dtype=bool))[None]
    mask |= np.eye(max_len, dtype=bool)[None]
    return mask[:, None, :, :]


class MultiHeadAttention(Module):
    """Scaled dot-product self-attention with q/k/v/o projections."""

    def __init__(self, cfg: BlockConfig, rng: np.random.Generator, dtype=np.float32):
        d = cfg.d_model
        self._cfg = cfg
        self.q = Linear(d, d, rng, dtype=dtype)
        self.k = Linear(d, d, rng, dtype=dtype)
        self.v = Linear(d, d, rng, dtype=dtype)
        self.o = Linear(d, d, rng, dtype=dtype)

    def projections(self) -> dict[str, Linear]:
        return {"q": self.q, "k": self.k, "v": self.v, "o": self.o}

    def __call__(self, x: Tensor, mode: MaskMode | str = MaskMode.CAUSAL,
                 lengths=None, return_weights: bool = False):
        squeeze = x.ndim == 2
        if squeeze:
            x = x.reshape((1,) + x.shape)
        B, L, d = x.shape
        if L > self._cfg.max_positions:
            raise CapacityError(f"sequence length {L} exceeds max_positions={self._cfg.max_positions}")
        h = self._cfg.n_heads
        dh = d // h
        lengths = np.full(B, L) if lengths is None else np.asarray(lengths)

        def split(t: Tensor) -> Tensor:
            return t.reshape(B, L, h, dh).transpose(0, 2, 1, 3)

        q, k, v = split(self.q(x)), split(self.k(x)), split(self.v(x))
        scores = T.matmul(q, k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(dh))
        weights = T.softmax(scores, axis=-1, mask=attention_mask(lengths, L, mode))
        ctx = T.matmul(weights, v).transpose(0, 2, 1, 3).reshape(B, L, d)
        out = self.o(ctx)
        if squeeze:
            out = out.reshape(L, d)
        return (out, weights) if return_weights else out


class FeedForward(Module):
    """Linear(d -> mult*d) -> GELU -> Linear(-> d)."""

    def __init__(self, cfg: BlockConfig, rng: np.random.Generator, dtype=np.float32):
        self.up = Linear(cfg.d_model, cfg.ffn_mult * cfg.d_model, rng, dtype=dtype)
        self.down = Linear(cfg.ffn_mult * cfg.d_model, cfg.d_model, rng, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return self.down(T.gelu(self.up(x)))


class PositionalEmbedding(Module):
    def __init__(self, cfg: BlockConfig, rng: np.random.Generator, dtype=np.float32):
        self._max = cfg.max_positions
        self.table = Tensor(rng.normal(0.0, 0.02, size=(cfg.max_positions, cfg.d_model)),
                            requires_grad=True, dtype=dtype)

    def __call__(self, n: int) -> Tensor:
        if n > self._max:
            raise CapacityError(f"{n} positions requested, table holds {self._max}")
        return self.table[:n]


class Block(Module):
    """Pre-norm residual block: x + attn(ln(x)), then x + ffn(ln(x))."""

    def __init__(self, cfg: BlockConfig, rng: np.random.Generator, dtype=np.float32):
        self.ln1 = LayerNorm(cfg.d_model, dtype)
        self.attn = MultiHeadAttention(cfg, rng, dtype)
        self.ln2 = LayerNorm(cfg.d_model, dtype)
        self.ffn = FeedForward(cfg, rng, dtype)

    def __call__(self, x: Tensor, mode: MaskMode | str, lengths=None) -> Tensor:
        x = x + self.attn(self.ln1(x), mode, lengths)
        return x + self.ffn(self.ln2(x))


def add_lora_to_blocks(blocks, rank: int, alpha: float, rng: np.random.Generator,
                       targets=("q", "k", "v", "o")) -> list[LoraAdapter]:
    adapters = []
    for i, blk in enumerate(blocks):
        for name, lin in blk.attn.projections().items():
            if name in targets:
                adapters.append(lin.add_lora(rank, alpha, rng, target=f"layers.{i}.attn.{name}"))
    return adapters


class Transformer(Module):
    """Token + position embeddings feeding a stack of blocks and a final norm.

    Shared by the bidirectional encoder and the causal decoder; the mask mode
    is the only structural difference.
    """

    def __init__(self, vocab_size: int, cfg: BlockConfig, n_layers: int,
                 rng: np.random.Generator, dtype=np.float32):
        self._cfg = cfg
        self.tok = Tensor(rng.normal(0.0, 0.02, size=(vocab_size, cfg.d_model)), requires_grad=True, dtype=dtype)
        self.pos = PositionalEmbedding(cfg, rng, dtype)
        self.layers = [Block(cfg, rng, dtype) for _ in range(n_layers)]
        self.ln_f = LayerNorm(cfg.d_model, dtype)

    @property
    def config(self) -> BlockConfig:
        return self._cfg

    def embed_ids(self, ids) -> Tensor:
        return T.take(self.tok, ids)

    def run(self, x: Tensor, mode: MaskMode | str, lengths=None) -> Tensor:
        """Apply positions and the block stack to embedded rows ``(B, L, d)``."""
        L = x.shape[-2]
        x = x + self.pos(L)
        for blk in self.layers:
            x = blk(x, mode, lengths)
        return self.ln_f(x)

    def lora_adapters(self) -> list[LoraAdapter]:
        return [lin.lora for blk in self.layers for lin in blk.attn.projections().values()
                if lin.lora is not None]

    def base_parameters(self) -> list[Tensor]:
        lora_ids = {id(p) for a in self.lora_adapters() for p in a.parameters()}
        return [p for p in self.parameters() if id(p) not in lora_ids]
