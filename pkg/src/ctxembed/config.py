"""Versioned JSON configuration objects.

Unknown keys are rejected so typos fail at load time instead of silently
falling back to defaults.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

SCHEMA_VERSION = 1

POOLING_MODES = ("concat_ctx_eos", "last_token", "mean", "weighted_mean", "bi_eos")
CTX_POSITIONS = ("after_instruction", "before_instruction")
MASK_MODES = ("causal", "bidirectional")
ENCODER_MODES = ("frozen", "lora", "full")
CTX_READOUTS = ("mean", "cross_attention")


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


def _check_choice(name: str, value, choices) -> None:
    if value not in choices:
        raise ConfigError(f"{name}={value!r}; expected one of {choices}")


class _JsonConfig:
    @classmethod
    def from_dict(cls, data: dict[str, Any]):
        data = dict(data)
        version = data.pop("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigError(f"{cls.__name__}: schema_version {version} unsupported (want {SCHEMA_VERSION})")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"{cls.__name__}: unknown keys {unknown}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict[str, Any]:
        out = {"schema_version": SCHEMA_VERSION}
        out.update(dataclasses.asdict(self))
        return out

    @classmethod
    def load(cls, path):
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        return cls.from_dict(data)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    def replace(self, **changes):
        return type(self).from_dict({**self.to_dict(), **changes})


@dataclass
class ModelConfig(_JsonConfig):
    """Architecture and ablation switches for the embedding model."""

    vocab_size: int = 1000
    # decoder
    d_model: int = 128
    n_layers: int = 4
    n_heads: int = 8
    ffn_mult: int = 4
    max_positions: int = 512
    mask: str = "causal"
    decoder_lora: bool = False
    # encoder
    use_ctx: bool = True
    d_enc: int = 64
    enc_layers: int = 2
    enc_heads: int = 4
    enc_max_positions: int = 512
    encoder_mode: str = "full"
    # contextual tokens
    ctx_count: int = 1
    ctx_readout: str = "mean"
    ctx_position: str = "after_instruction"
    inst_wrappers: bool = False
    # pooling
    pooling: str = "concat_ctx_eos"
    # LoRA
    lora_rank: int = 64
    lora_alpha: float = 32.0
    lora_targets: list = field(default_factory=lambda: ["q", "k", "v", "o"])
    seed: int = 0
    dtype: str = "f32"

    def __post_init__(self):
        _check_choice("pooling", self.pooling, POOLING_MODES)
        _check_choice("ctx_position", self.ctx_position, CTX_POSITIONS)
        _check_choice("mask", self.mask, MASK_MODES)
        _check_choice("encoder_mode", self.encoder_mode, ENCODER_MODES)
        _check_choice("ctx_readout", self.ctx_readout, CTX_READOUTS)
        _check_choice("dtype", self.dtype, ("f32", "f64"))
        if self.ctx_count not in (1, 2, 4, 8):
            raise ConfigError(f"ctx_count={self.ctx_count}; supported counts are 1, 2, 4, 8")
        if self.ctx_count > 1 and self.ctx_readout != "cross_attention":
            raise ConfigError("ctx_count > 1 requires ctx_readout='cross_attention'")
        if self.d_model % self.n_heads or self.d_enc % self.enc_heads:
            raise ConfigError("hidden sizes must be divisible by their head counts")
        if not self.use_ctx and self.pooling in ("concat_ctx_eos", "bi_eos"):
            raise ConfigError(f"pooling={self.pooling} needs a Contextual token (use_ctx=true)")
        bad = set(self.lora_targets) - {"q", "k", "v", "o"}
        if bad:
            raise ConfigError(f"unknown LoRA targets {sorted(bad)}")

    @property
    def embedding_dim(self) -> int:
        return 2 * self.d_model if self.pooling in ("concat_ctx_eos", "bi_eos") else self.d_model


@dataclass
class TrainConfig(_JsonConfig):
    """Loss, optimizer and schedule settings for contrastive training."""

    tau: float = 0.05
    use_in_batch_negatives: bool = True
    peak_lr: float = 1e-4
    warmup_steps: int = 300
    train_steps: int = 500
    max_steps: int | None = None
    grad_accum: int = 2
    batch_size: int = 32
    weight_decay: float = 0.0
    betas: list = field(default_factory=lambda: [0.9, 0.999])
    adam_eps: float = 1e-8
    max_hard_negatives: int = 1
    seed: int = 0
    instructions: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.max_steps is None:
            self.max_steps = 2 * self.train_steps
        if self.tau <= 0:
            raise ConfigError("tau must be positive")
        if self.warmup_steps >= self.max_steps:
            raise ConfigError("warmup_steps must be smaller than max_steps")
        if self.train_steps > self.max_steps:
            raise ConfigError("train_steps must not exceed max_steps")
        if self.grad_accum < 1 or self.batch_size < 1:
            raise ConfigError("grad_accum and batch_size must be >= 1")
