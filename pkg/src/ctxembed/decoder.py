"""Decoder-only language model consuming assembled inputs."""

from __future__ import annotations

import numpy as np

from .bridge import AssembledBatch, AssembledInput
from .nn import BlockConfig, CapacityError, MaskMode, Module, Transformer, add_lora_to_blocks
from .tensor import Tensor


class DecoderModel(Module):
    """Causal transformer over pre-embedded rows.

    ``mask="bidirectional"`` is the ablation that removes the causal mask;
    everything else is unchanged.
    """

    def __init__(self, vocab_size: int, d_model: int = 128, n_layers: int = 4, n_heads: int = 8,
                 max_positions: int = 512, ffn_mult: int = 4, mask: str = "causal",
                 rng: np.random.Generator | None = None, dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng(0)
        self._mask = MaskMode(mask)
        self.net = Transformer(vocab_size, BlockConfig(d_model, n_heads, ffn_mult, max_positions),
                               n_layers, rng, dtype)

    @property
    def mask(self) -> MaskMode:
        return self._mask

    @property
    def d_model(self) -> int:
        return self.net.config.d_model

    @property
    def max_positions(self) -> int:
        return self.net.config.max_positions

    @property
    def embed_table(self) -> Tensor:
        return self.net.tok

    def add_lora(self, rank: int, alpha: float, rng: np.random.Generator, targets=("q", "k", "v", "o")):
        """Attach adapters and freeze the base weights."""
        adapters = add_lora_to_blocks(self.net.layers, rank, alpha, rng, targets)
        for p in self.net.base_parameters():
            p.requires_grad = False
        return adapters

    def forward(self, inp: AssembledInput | AssembledBatch) -> Tensor:
        """Last-layer hidden states: ``(rows, d)`` for one input, ``(B, L, d)`` for a batch."""
        single = isinstance(inp, AssembledInput)
        x = inp.x.reshape((1,) + inp.x.shape) if single else inp.x
        if x.shape[1] > self.max_positions:
            raise CapacityError(f"{x.shape[1]} rows exceed decoder max_positions={self.max_positions}")
        lengths = np.array([inp.rows]) if single else inp.lengths
        states = self.net.run(x, self._mask, lengths)
        return states.reshape(states.shape[1:]) if single else states

    __call__ = forward

    def forward_ids(self, id_rows, pad_id: int) -> tuple[Tensor, np.ndarray]:
        """Run plain token sequences (no Contextual slots); returns states and lengths."""
        lengths = np.array([len(r) for r in id_rows])
        ids = np.full((len(id_rows), int(lengths.max())), pad_id, dtype=np.int64)
        for i, r in enumerate(id_rows):
            ids[i, : len(r)] = r
        if ids.shape[1] > self.max_positions:
            raise CapacityError(f"{ids.shape[1]} tokens exceed decoder max_positions={self.max_positions}")
        return self.net.run(self.net.embed_ids(ids), self._mask, lengths), lengths


def hidden_at(states: Tensor, index: int) -> Tensor:
    """Row ``index`` of ``(rows, d)`` states as a ``(1, d)`` tensor."""
    rows = states.shape[0]
    if not 0 <= index < rows:
        raise IndexError(f"row {index} out of range for {rows} hidden states")
    return states[index:index + 1]
