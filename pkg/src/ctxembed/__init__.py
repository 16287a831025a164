"""Text embeddings from causal decoders with a prepended Contextual token."""

from .checkpoint import load_checkpoint, save_checkpoint
from .config import ConfigError, ModelConfig, TrainConfig
from .data import TrainingExample, load_training_jsonl
from .model import EmbeddingModel
from .tokenizer import Tokenizer, bpe_train
from .training import train

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "EmbeddingModel", "ModelConfig", "Tokenizer", "TrainConfig", "TrainingExample",
    "bpe_train", "load_checkpoint", "load_training_jsonl", "save_checkpoint", "train",
]
