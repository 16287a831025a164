"""The full embedding model: encoder -> bridge -> decoder -> pooling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bridge import (AssembledBatch, BridgeParams, QueryBank, assemble_batch, expand,
                     make_layout, project)
from .config import ModelConfig
from .decoder import DecoderModel
from .encoder import EncoderModel
from .nn import Module
from .pooling import pool_batch
from .tensor import Tensor, no_grad
from .tokenizer import Tokenizer

_DT = {"f32": np.float32, "f64": np.float64}


@dataclass
class ForwardResult:
    embeddings: Tensor  # (B, D), unit norm
    states: Tensor  # (B, L, d) decoder hidden states
    batch: AssembledBatch
    ctx: Tensor | None  # (B, count, d) projected Contextual tokens


class EmbeddingModel(Module):
    def __init__(self, cfg: ModelConfig):
        self._cfg = cfg
        dtype = _DT[cfg.dtype]
        rng = np.random.default_rng(cfg.seed)
        self.decoder = DecoderModel(cfg.vocab_size, cfg.d_model, cfg.n_layers, cfg.n_heads,
                                    cfg.max_positions, cfg.ffn_mult, cfg.mask, rng, dtype)
        self.encoder = None
        self.bridge = None
        self.bank = None
        if cfg.use_ctx:
            self.encoder = EncoderModel(cfg.vocab_size, cfg.d_enc, cfg.enc_layers, cfg.enc_heads,
                                        cfg.enc_max_positions, cfg.ffn_mult, Tokenizer.pad_id, rng, dtype)
            self.bridge = BridgeParams(cfg.d_model, cfg.d_enc, rng, dtype)
            if cfg.ctx_readout == "cross_attention":
                self.bank = QueryBank(cfg.ctx_count, cfg.d_enc, rng, dtype)
            self.encoder.set_trainable(cfg.encoder_mode != "frozen", cfg.encoder_mode == "lora",
                                       cfg.lora_rank, cfg.lora_alpha, rng)
        if cfg.decoder_lora:
            self.decoder.add_lora(cfg.lora_rank, cfg.lora_alpha, rng, tuple(cfg.lora_targets))

    @property
    def config(self) -> ModelConfig:
        return self._cfg

    @property
    def ctx_count(self) -> int:
        return self._cfg.ctx_count if self._cfg.use_ctx else 0

    def trainable_parameters(self) -> list[Tensor]:
        return [p for p in self.parameters() if p.requires_grad]

    def layouts(self, texts, instructions):
        cfg = self._cfg
        return [make_layout(instr, text, self.ctx_count, cfg.ctx_position,
                            eos_id=Tokenizer.eos_id, pad_id=Tokenizer.pad_id,
                            max_positions=self.decoder.max_positions,
                            wrappers=(Tokenizer.inst_open_id, Tokenizer.inst_close_id) if cfg.inst_wrappers else None)
                for text, instr in zip(texts, instructions)]

    def contextual_tokens(self, texts) -> Tensor | None:
        """Projected Contextual tokens ``(B, count, d)`` for token-id texts."""
        if not self._cfg.use_ctx:
            return None
        enc = self.encoder.forward_batch(texts)
        if self.bank is not None:
            return expand(enc.states, self.bank, self.bridge, enc.lengths)
        c = project(enc.pooled, self.bridge)
        return c.reshape(c.shape[0], 1, c.shape[1])

    def forward(self, texts, instructions=None) -> ForwardResult:
        """Embed token-id texts; ``instructions`` holds one id list per text (or None)."""
        texts = [list(t) for t in texts]
        if instructions is None:
            instructions = [[] for _ in texts]
        elif instructions and isinstance(instructions[0], (int, np.integer)):
            instructions = [list(instructions)] * len(texts)
        layouts = self.layouts(texts, instructions)
        ctx = self.contextual_tokens(texts)
        batch = assemble_batch(layouts, self.decoder.embed_table, ctx, Tokenizer.pad_id)
        states = self.decoder(batch)
        emb = pool_batch(states, batch, self._cfg.pooling, bridge_c=ctx)
        return ForwardResult(emb, states, batch, ctx)

    __call__ = forward

    def embed(self, texts, instructions=None, batch_size: int = 64) -> np.ndarray:
        """Inference helper returning a ``(N, D)`` float array."""
        out = []
        texts = list(texts)
        if instructions is not None and instructions and isinstance(instructions[0], (int, np.integer)):
            instructions = [list(instructions)] * len(texts)
        with no_grad():
            for s in range(0, len(texts), batch_size):
                instr = None if instructions is None else instructions[s:s + batch_size]
                out.append(self.forward(texts[s:s + batch_size], instr).embeddings.data)
        return np.concatenate(out, axis=0) if out else np.zeros((0, self._cfg.embedding_dim))

    def embed_text(self, tokenizer: Tokenizer, texts, instruction: str = "", batch_size: int = 64) -> np.ndarray:
        ids = [tokenizer.encode(t) for t in texts]
        instr = tokenizer.encode(instruction) if instruction else []
        return self.embed(ids, [instr] * len(ids), batch_size)
