"""Lightweight bidirectional encoder producing the pooled text vector ``h``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import BlockConfig, MaskMode, Module, Transformer, add_lora_to_blocks
from .tensor import Tensor


class EmptyInputError(ValueError):
    """Raised when an empty token sequence is given to a model."""


@dataclass
class EncodedBatch:
    states: Tensor  # (B, n, k) last-layer hidden states
    lengths: np.ndarray
    pooled: Tensor  # (B, k) mean over real tokens
    truncated: np.ndarray  # per-row flag: input was cut to max positions


@dataclass
class Encoded:
    h: Tensor  # (1, k)
    states: Tensor  # (n, k)
    truncated: bool


def pad_batch(seqs, pad_id: int, max_len: int | None = None):
    """Right-pad id lists into an int matrix; returns (ids, lengths, truncated)."""
    if any(len(s) == 0 for s in seqs):
        raise EmptyInputError("cannot encode an empty token sequence")
    truncated = np.array([max_len is not None and len(s) > max_len for s in seqs])
    seqs = [list(s[:max_len]) if max_len is not None else list(s) for s in seqs]
    lengths = np.array([len(s) for s in seqs])
    ids = np.full((len(seqs), int(lengths.max())), pad_id, dtype=np.int64)
    for i, s in enumerate(seqs):
        ids[i, : len(s)] = s
    return ids, lengths, truncated


class EncoderModel(Module):
    """BERT-style encoder: every layer attends bidirectionally, output is mean-pooled."""

    def __init__(self, vocab_size: int, d_enc: int = 64, n_layers: int = 2, n_heads: int = 4,
                 max_positions: int = 512, ffn_mult: int = 4, pad_id: int = 256,
                 rng: np.random.Generator | None = None, dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng(0)
        self._pad_id = pad_id
        self.net = Transformer(vocab_size, BlockConfig(d_enc, n_heads, ffn_mult, max_positions),
                               n_layers, rng, dtype)
        self._trainable = True
        self._use_lora = False

    @property
    def d_enc(self) -> int:
        return self.net.config.d_model

    @property
    def max_positions(self) -> int:
        return self.net.config.max_positions

    @property
    def trainable(self) -> bool:
        return self._trainable

    @property
    def uses_lora(self) -> bool:
        return self._use_lora

    def add_lora(self, rank: int, alpha: float, rng: np.random.Generator, targets=("q", "k", "v", "o")):
        return add_lora_to_blocks(self.net.layers, rank, alpha, rng, targets)

    def set_trainable(self, flag: bool, use_lora: bool = False,
                      rank: int = 64, alpha: float = 32.0, rng: np.random.Generator | None = None) -> None:
        """Choose which encoder parameters receive gradients.

        ``flag=False`` freezes everything. ``flag=True, use_lora=True`` trains
        only LoRA adapters (created on demand); otherwise all weights train.
        """
        if flag and use_lora and not self.net.lora_adapters():
            self.add_lora(rank, alpha, rng if rng is not None else np.random.default_rng(0))
        self._trainable = bool(flag)
        self._use_lora = bool(flag and use_lora)
        for p in self.net.base_parameters():
            p.requires_grad = flag and not use_lora
        for adapter in self.net.lora_adapters():
            adapter.set_requires_grad(self._use_lora)

    def trainable_parameters(self) -> list[Tensor]:
        return [p for p in self.parameters() if p.requires_grad]

    def forward_batch(self, seqs) -> EncodedBatch:
        ids, lengths, truncated = pad_batch(seqs, self._pad_id, self.max_positions)
        x = self.net.embed_ids(ids)
        states = self.net.run(x, MaskMode.BIDIRECTIONAL, lengths)
        keep = np.arange(ids.shape[1])[None, :] < lengths[:, None]
        weights = keep / lengths[:, None]
        pooled = T.weighted_rows(states, weights)
        return EncodedBatch(states, lengths, pooled, truncated)

    def encode(self, text_ids) -> Encoded:
        """Mean of last-layer hidden states over all tokens of one text."""
        out = self.forward_batch([list(text_ids)])
        n = int(out.lengths[0])
        return Encoded(out.pooled, out.states[0, :n], bool(out.truncated[0]))
