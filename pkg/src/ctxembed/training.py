"""Contrastive training: InfoNCE loss, AdamW, warmup/linear-decay schedule, batching."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .config import TrainConfig
from .data import TrainingExample
from .tensor import Tensor

logger = logging.getLogger(__name__)


class NumericalError(RuntimeError):
    """Training produced a non-finite loss or gradient."""


# ----------------------------------------------------------------------- loss
def info_nce(q: Tensor, pos: Tensor, negs, tau: float = 0.05) -> Tensor:
    """``-log softmax`` of the positive among ``[pos] + negs`` at temperature ``tau``.

    Inputs are unit vectors of shape ``(D,)`` or ``(1, D)``, so the dot
    product is the cosine similarity.
    """
    def row(t: Tensor) -> Tensor:
        return t.reshape(1, t.shape[-1]) if t.ndim == 1 else t

    q = row(q)
    cands = [row(pos)] + [row(n) for n in negs]
    dims = {c.shape[-1] for c in cands} | {q.shape[-1]}
    if len(dims) != 1:
        raise T.ShapeError(f"info_nce: embedding widths differ {sorted(dims)}")
    P = T.concat(cands, axis=0) if len(cands) > 1 else cands[0]
    logits = T.matmul(q, P.T) * (1.0 / tau)
    return -T.log_softmax(logits, axis=-1)[0, 0]


def batch_loss(q_emb: Tensor, p_emb: Tensor, neg_emb: Tensor | None = None, neg_owner=None,
               tau: float = 0.05, use_in_batch_negatives: bool = True) -> Tensor:
    """Mean InfoNCE over a batch of ``B`` queries.

    Query ``i`` scores against its own positive, every other query's
    positive (when in-batch negatives are on) and the hard negatives whose
    ``neg_owner`` entry equals ``i``.
    """
    B = q_emb.shape[0]
    if p_emb.shape != q_emb.shape:
        raise T.ShapeError(f"batch_loss: queries {q_emb.shape} vs positives {p_emb.shape}")
    if neg_emb is not None and neg_emb.shape[0]:
        cands = T.concat([p_emb, neg_emb], axis=0)
        owner = np.asarray(neg_owner)
    else:
        cands, owner = p_emb, np.zeros(0, dtype=np.int64)
    mask = np.zeros((B, cands.shape[0]), dtype=bool)
    mask[:, :B] = use_in_batch_negatives
    mask[np.arange(B), np.arange(B)] = True
    if owner.size:
        mask[owner, B + np.arange(owner.size)] = True
    logits = T.matmul(q_emb, cands.T) * (1.0 / tau)
    logp = T.log_softmax(logits, axis=-1, mask=mask)
    diag = np.arange(B)
    return -(logp[diag, diag].mean())


# ------------------------------------------------------------------- schedule
def lr_at(step: int, cfg: TrainConfig) -> float:
    """Linear warmup 0 -> peak over ``warmup_steps``, then linear decay to 0 at ``max_steps``."""
    peak, warm, end = cfg.peak_lr, cfg.warmup_steps, cfg.max_steps
    if step <= 0:
        return 0.0
    if step < warm:
        return peak * step / warm
    if step >= end:
        return 0.0
    return peak * (end - step) / (end - warm)


class AdamW:
    """Adam with decoupled weight decay."""

    def __init__(self, params, betas=(0.9, 0.999), eps: float = 1e-8, weight_decay: float = 0.0):
        self.params = list(params)
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self, lr: float) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            if self.weight_decay:
                p.data -= (lr * self.weight_decay) * p.data
            p.data -= (lr * update).astype(p.data.dtype, copy=False)


def grad_norm(params) -> float:
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(np.sum(p.grad.astype(np.float64) ** 2))
    return math.sqrt(total)


# ------------------------------------------------------------------- sampling
@dataclass
class Batch:
    examples: list[TrainingExample]
    source: str
    indices: list[int] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.examples)


class BatchSampler:
    """Homogeneous batches: every batch comes from a single dataset.

    A dataset is picked with probability proportional to ``size * ratio``;
    examples are drawn without replacement until the dataset is exhausted,
    then it is reshuffled (a batch may wrap across that boundary).
    """

    def __init__(self, datasets, batch_size: int, seed: int = 0, ratios=None):
        if isinstance(datasets, (list, tuple)):
            datasets = {f"dataset{i}": d for i, d in enumerate(datasets)}
        self.datasets = {k: list(v) for k, v in datasets.items() if len(v)}
        if not self.datasets:
            raise ValueError("BatchSampler needs at least one non-empty dataset")
        self.batch_size = batch_size
        self.rng = np.random.default_rng(seed)
        ratios = ratios or {}
        self._names = sorted(self.datasets)
        w = np.array([len(self.datasets[n]) * float(ratios.get(n, 1.0)) for n in self._names])
        self._probs = w / w.sum()
        self._perm = {n: self.rng.permutation(len(self.datasets[n])) for n in self._names}
        self._cursor = {n: 0 for n in self._names}

    def _draw(self, name: str) -> int:
        if self._cursor[name] >= len(self._perm[name]):
            self._perm[name] = self.rng.permutation(len(self.datasets[name]))
            self._cursor[name] = 0
        idx = int(self._perm[name][self._cursor[name]])
        self._cursor[name] += 1
        return idx

    def sample_batch(self, size: int | None = None) -> Batch:
        size = size or self.batch_size
        name = self._names[int(self.rng.choice(len(self._names), p=self._probs))]
        idx = [self._draw(name) for _ in range(size)]
        return Batch([self.datasets[name][i] for i in idx], name, idx)


# ------------------------------------------------------------------ training
def _encode_examples(examples, tokenizer, instructions: dict, max_negs: int, cache: dict):
    def ids(text):
        got = cache.get(text)
        if got is None:
            got = cache[text] = tokenizer.encode(text)
        return got

    queries = [ids(e.query) for e in examples]
    q_instr = [ids(instructions[e.task]) if instructions.get(e.task) else [] for e in examples]
    positives = [ids(e.positive) for e in examples]
    negs, owner = [], []
    for i, e in enumerate(examples):
        for n in e.hard_negatives[:max_negs]:
            negs.append(ids(n))
            owner.append(i)
    return queries, q_instr, positives, negs, np.array(owner, dtype=np.int64)


def micro_batch_loss(model, examples, tokenizer, cfg: TrainConfig, cache: dict | None = None) -> Tensor:
    """Embed queries (with instructions) and passages (without), then score them."""
    cache = {} if cache is None else cache
    queries, q_instr, positives, negs, owner = _encode_examples(
        examples, tokenizer, cfg.instructions, cfg.max_hard_negatives, cache)
    B = len(queries)
    q = model(queries, q_instr).embeddings
    passages = model(positives + negs).embeddings
    p = passages[:B]
    n = passages[B:] if negs else None
    return batch_loss(q, p, n, owner, cfg.tau, cfg.use_in_batch_negatives)


def train_step(model, batch, optimizer: AdamW, cfg: TrainConfig, tokenizer, step: int,
               cache: dict | None = None) -> dict:
    """One optimizer update from ``grad_accum`` equal micro-batches of ``batch``.

    Each micro-batch loss is divided by ``grad_accum`` so the accumulated
    gradient equals the gradient of the mean loss over the whole batch.
    """
    examples = batch.examples if isinstance(batch, Batch) else list(batch)
    n_micro = cfg.grad_accum
    size = math.ceil(len(examples) / n_micro)
    optimizer.zero_grad()
    total = 0.0
    for s in range(0, len(examples), size):
        loss = micro_batch_loss(model, examples[s:s + size], tokenizer, cfg, cache)
        value = loss.item()
        if not math.isfinite(value):
            ids = batch.indices if isinstance(batch, Batch) else list(range(len(examples)))
            raise NumericalError(f"non-finite loss at step {step}; batch ids {ids}")
        (loss * (1.0 / n_micro)).backward()
        total += value / n_micro
    gnorm = grad_norm(optimizer.params)
    if not math.isfinite(gnorm):
        raise NumericalError(f"non-finite gradient at step {step}")
    lr = lr_at(step + 1, cfg)
    optimizer.step(lr)
    return {"step": step, "loss": total, "lr": lr, "grad_norm": gnorm}


def make_optimizer(model, cfg: TrainConfig) -> AdamW:
    return AdamW(model.trainable_parameters(), tuple(cfg.betas), cfg.adam_eps, cfg.weight_decay)


def train(model, datasets, tokenizer, cfg: TrainConfig, steps: int | None = None,
          metrics_path=None, log_every: int = 50, ratios=None) -> list[dict]:
    """Run ``steps`` (default ``cfg.train_steps``) updates; returns the metrics history."""
    steps = cfg.train_steps if steps is None else steps
    sampler = BatchSampler(datasets, cfg.batch_size * cfg.grad_accum, cfg.seed, ratios)
    opt = make_optimizer(model, cfg)
    cache: dict = {}
    history = []
    fh = open(metrics_path, "w") if metrics_path else None
    try:
        for step in range(steps):
            metrics = train_step(model, sampler.sample_batch(), opt, cfg, tokenizer, step, cache)
            history.append(metrics)
            if fh:
                fh.write(json.dumps(metrics) + "\n")
            if log_every and (step % log_every == 0 or step == steps - 1):
                logger.info("step %d loss %.4f lr %.2e grad_norm %.3f", step, metrics["loss"],
                            metrics["lr"], metrics["grad_norm"])
    finally:
        if fh:
            fh.close()
    return history
