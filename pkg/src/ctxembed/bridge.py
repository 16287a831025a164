"""Contextual-token bridge and decoder input assembly.

The bridge maps the encoder vector ``h`` (width ``k``) into the decoder's
word-embedding space (width ``d``) with a bias-free two-layer MLP:
``C = gelu(h @ W1.T) @ W2.T``. Assembly then lays out the decoder input as
``[instruction; C; text; EOS]`` (or ``[C; instruction; text; EOS]``).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .encoder import EmptyInputError
from .nn import Module
from .tensor import Tensor

AFTER = "after_instruction"
BEFORE = "before_instruction"


class BridgeParams(Module):
    def __init__(self, d: int, k: int, rng: np.random.Generator | None = None, dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.W1 = Tensor(rng.normal(0, 1 / math.sqrt(k), (d, k)), requires_grad=True, dtype=dtype)
        self.W2 = Tensor(rng.normal(0, 1 / math.sqrt(d), (d, d)), requires_grad=True, dtype=dtype)

    @property
    def d(self) -> int:
        return self.W1.shape[0]

    @property
    def k(self) -> int:
        return self.W1.shape[1]


def project(h: Tensor, params: BridgeParams) -> Tensor:
    """``gelu(h @ W1.T) @ W2.T``; works on ``(.., k)`` inputs."""
    if h.shape[-1] != params.k:
        raise T.ShapeError(f"project: h has width {h.shape[-1]}, W1 expects {params.k}")
    return T.matmul(T.gelu(T.matmul(h, params.W1.T)), params.W2.T)


class QueryBank(Module):
    """Learnable queries that read ``count`` vectors out of encoder states.

    Single-head cross-attention of width ``d_enc``: keys are a linear map of
    the states, values are the states themselves. All-zero queries give
    uniform weights, i.e. plain mean pooling.
    """

    def __init__(self, count: int, d_enc: int, rng: np.random.Generator | None = None, dtype=np.float32):
        if count not in (1, 2, 4, 8):
            raise ValueError(f"unsupported Contextual token count {count}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.queries = Tensor(rng.normal(0, 1.0, (count, d_enc)), requires_grad=True, dtype=dtype)
        self.Wk = Tensor(rng.normal(0, 1 / math.sqrt(d_enc), (d_enc, d_enc)), requires_grad=True, dtype=dtype)

    @property
    def count(self) -> int:
        return self.queries.shape[0]

    def readout(self, states: Tensor, lengths=None, return_weights: bool = False):
        """Cross-attend ``(B, n, k)`` states; returns ``(B, count, k)``."""
        squeeze = states.ndim == 2
        if squeeze:
            states = states.reshape((1,) + states.shape)
        B, n, k = states.shape
        lengths = np.full(B, n) if lengths is None else np.asarray(lengths)
        keys = T.matmul(states, self.Wk.T)  # (B, n, k)
        scores = T.matmul(keys, self.queries.T).transpose(0, 2, 1) * (1.0 / math.sqrt(k))  # (B, count, n)
        mask = (np.arange(n)[None, :] < lengths[:, None])[:, None, :]
        weights = T.softmax(scores, axis=-1, mask=mask)
        out = T.matmul(weights, states)
        if squeeze:
            out = out.reshape(out.shape[1:])
        return (out, weights) if return_weights else out


def expand(enc_states: Tensor, bank: QueryBank, params: BridgeParams, lengths=None) -> Tensor:
    """``count`` Contextual tokens from cross-attention readouts, each projected."""
    return project(bank.readout(enc_states, lengths), params)


# ------------------------------------------------------------------- assembly
@dataclass
class Layout:
    """Row bookkeeping for one assembled sequence. Spans are half-open."""

    instr_span: tuple[int, int]
    ctx_span: tuple[int, int]
    text_span: tuple[int, int]
    eos_index: int
    ctx_position: str
    ids: list[int]  # token id per row; Contextual rows hold the pad id
    truncated: bool = False

    @property
    def rows(self) -> int:
        return self.eos_index + 1

    @property
    def ctx_count(self) -> int:
        return self.ctx_span[1] - self.ctx_span[0]

    @property
    def ctx_rows(self) -> list[int]:
        return list(range(*self.ctx_span))


def wrap_instruction(instruction_ids, tok) -> list[int]:
    return [tok.inst_open_id, *instruction_ids, tok.inst_close_id]


def make_layout(instruction_ids, text_ids, count: int, position: str = AFTER, *,
                eos_id: int, pad_id: int, max_positions: int | None = None,
                wrappers: tuple[int, int] | None = None) -> Layout:
    """Place instruction, ``count`` Contextual slots, text and EOS.

    Overflow trims text from the right; instruction, Contextual slots and
    EOS are always kept.
    """
    if position not in (AFTER, BEFORE):
        raise ValueError(f"unknown Contextual token position {position!r}")
    text = list(text_ids)
    if not text:
        raise EmptyInputError("text must contain at least one token")
    instr = list(instruction_ids)
    if wrappers is not None and instr:
        instr = [wrappers[0], *instr, wrappers[1]]
    l, n = len(instr), len(text)
    truncated = False
    if max_positions is not None and l + n + count + 1 > max_positions:
        n = max_positions - l - count - 1
        if n < 1:
            raise ValueError(f"instruction of {l} tokens leaves no room for text within {max_positions} positions")
        text = text[:n]
        truncated = True
    ctx_ids = [pad_id] * count
    if position == AFTER:
        ids = instr + ctx_ids + text + [eos_id]
        instr_span, ctx_span = (0, l), (l, l + count)
    else:
        ids = ctx_ids + instr + text + [eos_id]
        ctx_span, instr_span = (0, count), (count, count + l)
    text_span = (l + count, l + count + n)
    return Layout(instr_span, ctx_span, text_span, l + count + n, position, ids, truncated)


@dataclass
class AssembledInput:
    """One decoder input sequence: embedding rows ``x`` plus its layout."""

    x: Tensor  # (rows, d)
    layout: Layout

    @property
    def rows(self) -> int:
        return self.layout.rows

    @property
    def instr_span(self):
        return self.layout.instr_span

    @property
    def ctx_span(self):
        return self.layout.ctx_span

    @property
    def text_span(self):
        return self.layout.text_span

    @property
    def eos_index(self) -> int:
        return self.layout.eos_index

    @property
    def ctx_position(self) -> str:
        return self.layout.ctx_position

    @property
    def truncated(self) -> bool:
        return self.layout.truncated


@dataclass
class AssembledBatch:
    """Right-padded batch of assembled sequences."""

    x: Tensor  # (B, L, d)
    layouts: list[Layout]
    lengths: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.lengths is None:
            self.lengths = np.array([lay.rows for lay in self.layouts])

    def __len__(self) -> int:
        return len(self.layouts)

    @property
    def eos_index(self) -> np.ndarray:
        return np.array([lay.eos_index for lay in self.layouts])

    @property
    def ctx_index(self) -> np.ndarray:
        """``(B, count)`` Contextual row indices (empty second axis when absent)."""
        return np.array([lay.ctx_rows for lay in self.layouts], dtype=np.int64).reshape(len(self.layouts), -1)


def assemble_batch(layouts: list[Layout], embed_table: Tensor, ctx: Tensor | None, pad_id: int) -> AssembledBatch:
    """Embed the id rows of each layout and drop ``ctx`` ``(B, count, d)`` into its slots."""
    L = max(lay.rows for lay in layouts)
    ids = np.full((len(layouts), L), pad_id, dtype=np.int64)
    for i, lay in enumerate(layouts):
        ids[i, : lay.rows] = lay.ids
    x = T.take(embed_table, ids)
    counts = {lay.ctx_count for lay in layouts}
    if counts != {0}:
        if ctx is None:
            raise ValueError("layouts reserve Contextual slots but no Contextual tokens were given")
        if len(counts) != 1 or ctx.shape[:2] != (len(layouts), counts.pop()):
            raise T.ShapeError(f"Contextual tokens {ctx.shape} do not match layouts")
        pos = np.array([lay.ctx_rows for lay in layouts], dtype=np.int64)
        x = T.scatter_rows(x, ctx, pos)
    return AssembledBatch(x, layouts)


def assemble(instruction_ids, ctx: Tensor | None, text_ids, position: str, embed_table: Tensor,
             inst_wrappers: bool = False, *, tokenizer, max_positions: int | None = None) -> AssembledInput:
    """Build ``[I; C; T; EOS]`` (after) or ``[C; I; T; EOS]`` (before) for one text.

    ``ctx`` is ``(count, d)``; ``None`` lays out a plain sequence with no
    Contextual rows.
    """
    count = 0 if ctx is None else ctx.shape[0]
    wrappers = (tokenizer.inst_open_id, tokenizer.inst_close_id) if inst_wrappers else None
    lay = make_layout(instruction_ids, text_ids, count, position, eos_id=tokenizer.eos_id,
                      pad_id=tokenizer.pad_id, max_positions=max_positions, wrappers=wrappers)
    ctx_b = None if ctx is None else ctx.reshape((1,) + ctx.shape)
    batch = assemble_batch([lay], embed_table, ctx_b, tokenizer.pad_id)
    return AssembledInput(batch.x.reshape(batch.x.shape[1:]), lay)


def assemble_passage(text_ids, ctx: Tensor | None, embed_table: Tensor, *, tokenizer,
                     max_positions: int | None = None) -> AssembledInput:
    """Passages carry no instruction: ``[C; T; EOS]``."""
    return assemble([], ctx, text_ids, AFTER, embed_table, False,
                    tokenizer=tokenizer, max_positions=max_positions)


def load_instructions(path) -> dict[str, str]:
    """Read a ``{task_name: instruction}`` JSON map."""
    data = json.loads(Path(path).read_text())
    if not isinstance(data, dict) or not all(isinstance(v, str) for v in data.values()):
        raise ValueError(f"{path}: expected a JSON object mapping task names to instruction strings")
    return data
