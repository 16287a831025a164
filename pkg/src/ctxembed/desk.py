"""Desk-scale paraphrase-retrieval experiment shared by the CLI, demos and tests.

A synthetic lexicon generates query/positive paraphrase pairs. Models are
trained contrastively on most of them and scored by retrieval over the
held-out positives (accuracy@1 and MRR).
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass

import numpy as np

from . import synthetic as S
from .bench import MethodSpec, seq_len
from .config import ModelConfig, TrainConfig
from .model import EmbeddingModel
from .tokenizer import Tokenizer, bpe_train
from .training import train

# Small enough to train 500 steps in about a minute on a laptop CPU.
DESK_MODEL = {"d_model": 128, "d_enc": 64, "n_layers": 2, "ffn_mult": 2}
DESK_TRAIN = {"batch_size": 32, "grad_accum": 1, "warmup_steps": 50, "peak_lr": 2e-3}

# The three pooling configurations whose ordering the training check compares.
ORDERING = {
    "concat_ctx_eos": {"pooling": "concat_ctx_eos"},
    "ctx_last_token": {"pooling": "last_token"},
    "plain_last_token": {"use_ctx": False, "pooling": "last_token"},
}

ABLATION_AXES = {
    "pooling": [{"pooling": p} for p in ("concat_ctx_eos", "last_token", "mean", "weighted_mean", "bi_eos")],
    "ctx_count": [{"ctx_count": c, "ctx_readout": "mean" if c == 1 else "cross_attention"} for c in (1, 2, 4, 8)],
    "ctx_position": [{"ctx_position": p} for p in ("before_instruction", "after_instruction")],
    "encoder": [{"encoder_mode": m} for m in ("frozen", "lora", "full")],
    "mask": [{"mask": m} for m in ("causal", "bidirectional")],
}


@dataclass
class DeskSetup:
    lexicon: S.Lexicon
    train: list
    test: list
    tokenizer: Tokenizer
    instruction: str = S.PARAPHRASE_INSTRUCTION

    @property
    def instructions(self) -> dict:
        return {"paraphrase": self.instruction}


def paraphrase_setup(n_pairs: int = 2000, n_test: int = 200, vocab_size: int = 1000,
                     data_seed: int = 1) -> DeskSetup:
    if not 0 < n_test < n_pairs:
        raise ValueError("need 0 < n_test < n_pairs")
    lex = S.make_lexicon(seed=0)
    pairs = S.paraphrase_pairs(lex, n_pairs, seed=data_seed)
    tr, te = pairs[:-n_test], pairs[-n_test:]
    tok = bpe_train(S.lexicon_corpus(lex, tr), vocab_size)
    return DeskSetup(lex, tr, te, tok)


def retrieval_scores(model: EmbeddingModel, setup: DeskSetup) -> dict:
    tok = setup.tokenizer
    instr = tok.encode(setup.instruction)
    q = model.embed([tok.encode(e.query) for e in setup.test], [instr] * len(setup.test))
    p = model.embed([tok.encode(e.positive) for e in setup.test])
    sims = q @ p.T
    gold = np.diag(sims)
    rank = (sims > gold[:, None]).sum(axis=1)
    return {"acc1": float(np.mean(rank == 0)), "mrr": float(np.mean(1.0 / (rank + 1)))}


def mean_query_seq_len(model_cfg: ModelConfig, setup: DeskSetup) -> float:
    """Mean decoder length of the held-out queries under ``model_cfg``."""
    tok = setup.tokenizer
    instr = tok.encode(setup.instruction)
    if model_cfg.use_ctx:
        method, count = MethodSpec("causal2vec"), model_cfg.ctx_count
    else:
        method, count = MethodSpec("plain"), 0
    method.max_len = model_cfg.max_positions
    return float(np.mean([seq_len(method, instr, tok.encode(e.query), count) for e in setup.test]))


def run_config(setup: DeskSetup, overrides: dict, steps: int = 500, seed: int = 0,
               base_model: dict | None = None, base_train: dict | None = None) -> dict:
    """Train one configuration from scratch and score it on the held-out pairs."""
    mcfg = ModelConfig(**{**DESK_MODEL, **(base_model or {}), **overrides,
                          "vocab_size": setup.tokenizer.vocab_size, "seed": seed})
    tkw = {**DESK_TRAIN, **(base_train or {}), "train_steps": steps, "seed": seed,
           "instructions": setup.instructions}
    if "warmup_steps" not in (base_train or {}):
        tkw["warmup_steps"] = min(DESK_TRAIN["warmup_steps"], max(1, steps // 10))
    tcfg = TrainConfig(**tkw)
    model = EmbeddingModel(mcfg)
    t0 = time.perf_counter()
    history = train(model, {"paraphrase": setup.train}, setup.tokenizer, tcfg, log_every=0)
    out = retrieval_scores(model, setup)
    out.update(seq_len=mean_query_seq_len(mcfg, setup), final_loss=history[-1]["loss"] if history else None,
               train_seconds=time.perf_counter() - t0)
    return out


def axis_rows(axis: str) -> list[dict]:
    if axis == "grid":
        rows = []
        for combo in itertools.product(*ABLATION_AXES.values()):
            merged: dict = {}
            for part in combo:
                merged.update(part)
            rows.append(merged)
        return rows
    if axis not in ABLATION_AXES:
        raise KeyError(axis)
    return [dict(r) for r in ABLATION_AXES[axis]]


def ablate(setup: DeskSetup, axis: str, steps: int, seeds=(0,), base_model: dict | None = None,
           base_train: dict | None = None) -> list[dict]:
    """One table row per setting on ``axis``: the setting, mean query length and seed-averaged scores."""
    table = []
    for overrides in axis_rows(axis):
        runs = [run_config(setup, overrides, steps, s, base_model, base_train) for s in seeds]
        row = dict(overrides)
        row.update(seq_len=runs[0]["seq_len"], acc1=float(np.mean([r["acc1"] for r in runs])),
                   mrr=float(np.mean([r["mrr"] for r in runs])), seeds=len(runs))
        table.append(row)
    return table
