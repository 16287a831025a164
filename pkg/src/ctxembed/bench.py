"""Sequence-length accounting and wall-clock profiling of embedding methods.

Four ways of feeding a text to a causal decoder are compared:

* ``plain``      ``[I; T; EOS]``
* ``causal2vec`` ``[I; C; T; EOS]`` with ``count`` Contextual tokens
* ``echo``       ``[I; T; T; EOS]``, the text repeated once (pooled on the second copy)
* ``icl``        ``[examples; I; T; EOS]``, few-shot examples prepended
"""

from __future__ import annotations

import csv
import statistics
import time
from dataclasses import dataclass, field

import numpy as np

from .tensor import no_grad
from .tokenizer import Tokenizer

VARIANTS = ("plain", "causal2vec", "echo", "icl")


@dataclass
class MethodSpec:
    variant: str
    icl_examples: list = field(default_factory=list)  # token-id lists or token counts
    max_len: int | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown method {self.variant!r}; expected one of {VARIANTS}")
        if self.variant == "icl" and not self.icl_examples:
            raise ValueError("icl method needs at least one example")
        if self.max_len is None:
            self.max_len = 2048 if self.variant == "icl" else 512

    @property
    def prefix_len(self) -> int:
        return sum(e if isinstance(e, (int, np.integer)) else len(e) for e in self.icl_examples)

    def prefix_ids(self) -> list[int]:
        out: list[int] = []
        for e in self.icl_examples:
            out.extend([Tokenizer.pad_id] * int(e) if isinstance(e, (int, np.integer)) else list(e))
        return out


@dataclass
class CostReport:
    method: str
    mean_seq_len: float
    mean_wall_ms: float = float("nan")
    encoder_overhead_ms: float = 0.0
    reduction_vs: dict = field(default_factory=dict)
    dataset: str = ""


def seq_len(method: MethodSpec, instruction_ids, text_ids, count: int = 1) -> int:
    """Decoder input length for one text under ``method``, capped at ``method.max_len``."""
    l, n = len(instruction_ids), len(text_ids)
    if method.variant == "plain":
        total = l + n + 1
    elif method.variant == "causal2vec":
        total = l + n + count + 1
    elif method.variant == "echo":
        total = l + 2 * n + 1
    else:
        total = l + method.prefix_len + n + 1
    return min(total, method.max_len)


def reduction(a: float, b: float) -> float:
    """Fractional saving of ``a`` relative to ``b``: ``1 - a / b``."""
    return 1.0 - a / b


def decoder_ids(method: MethodSpec, instruction_ids, text_ids) -> list[int]:
    """Token ids fed to the decoder for the id-only variants (everything but causal2vec)."""
    instr, text = list(instruction_ids), list(text_ids)
    if method.variant == "plain":
        ids = instr + text
    elif method.variant == "echo":
        ids = instr + text + text
    elif method.variant == "icl":
        ids = method.prefix_ids() + instr + text
    else:
        raise ValueError("causal2vec inputs are assembled by the model, not as raw ids")
    ids = ids[-(method.max_len - 1):]
    return ids + [Tokenizer.eos_id]


def _timed(fn, repetitions: int, warmups: int) -> float:
    for _ in range(warmups):
        fn()
    samples = []
    for _ in range(repetitions):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    return statistics.median(samples)


def profile(model, method: MethodSpec, corpus, repetitions: int = 20, warmups: int = 3,
            dataset: str = "") -> CostReport:
    """Median per-sample forward time over ``repetitions`` timed runs of the whole corpus.

    ``corpus`` is a list of ``(instruction_ids, text_ids)``. For causal2vec the
    encoder + bridge time is also measured on its own.
    """
    corpus = list(corpus)
    if not corpus:
        raise ValueError("profile needs a non-empty corpus")
    count = model.ctx_count if method.variant == "causal2vec" else 0
    lens = [seq_len(method, i, t, count) for i, t in corpus]
    n = len(corpus)
    texts = [t for _, t in corpus]
    overhead = 0.0
    with no_grad():
        if method.variant == "causal2vec":
            if not model.config.use_ctx:
                raise ValueError("causal2vec profiling needs a model with a Contextual token")
            instrs = [i for i, _ in corpus]
            wall = _timed(lambda: model.forward(texts, instrs), repetitions, warmups)
            overhead = _timed(lambda: model.contextual_tokens(texts), repetitions, warmups)
        else:
            rows = [decoder_ids(method, i, t) for i, t in corpus]
            wall = _timed(lambda: model.decoder.forward_ids(rows, Tokenizer.pad_id), repetitions, warmups)
    return CostReport(method.variant, float(np.mean(lens)), 1000.0 * wall / n, 1000.0 * overhead / n,
                      {method.variant: 0.0}, dataset)


def compare(reports: list[CostReport], key: str = "mean_seq_len") -> list[CostReport]:
    """Fill ``reduction_vs`` for every pair of reports on ``key``."""
    for r in reports:
        for other in reports:
            r.reduction_vs[other.method] = reduction(getattr(r, key), getattr(other, key))
    return reports


def write_csv(path, reports: list[CostReport], baseline: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "dataset", "mean_seq_len", "median_ms", "reduction_vs_baseline"])
        base = next((r for r in reports if r.method == baseline), None)
        for r in reports:
            red = reduction(r.mean_seq_len, base.mean_seq_len) if base else float("nan")
            w.writerow([r.method, r.dataset, f"{r.mean_seq_len:.4f}", f"{r.mean_wall_ms:.4f}", f"{red:.4f}"])
