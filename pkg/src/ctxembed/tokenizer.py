"""Deterministic byte-level BPE tokenizer.

Ids 0-255 are raw bytes, the next four ids are the special tokens, and
learned merges follow. Text is pre-split into chunks of an optional leading
space plus a run of non-space bytes (or a run of whitespace); merges never
cross chunk boundaries.
"""

from __future__ import annotations

import hashlib
import json
import re
from collections import Counter
from pathlib import Path

from .config import ConfigError

SPECIALS = ("<pad>", "<eos>", "[INST]", "[/INST]")
N_BYTES = 256
_CHUNK = re.compile(rb" ?\S+|\s+")


class Tokenizer:
    def __init__(self, merges: list[tuple[int, int]] | None = None):
        self.merges: list[tuple[int, int]] = [tuple(m) for m in (merges or [])]
        self.vocab: dict[int, bytes] = {i: bytes([i]) for i in range(N_BYTES)}
        for i, name in enumerate(SPECIALS):
            self.vocab[N_BYTES + i] = name.encode()
        self._ranks: dict[tuple[int, int], int] = {}
        for rank, (a, b) in enumerate(self.merges):
            new_id = self.first_merge_id + rank
            self.vocab[new_id] = self.vocab[a] + self.vocab[b]
            self._ranks[(a, b)] = new_id
        self._cache: dict[bytes, list[int]] = {}

    pad_id = N_BYTES
    eos_id = N_BYTES + 1
    inst_open_id = N_BYTES + 2
    inst_close_id = N_BYTES + 3
    first_merge_id = N_BYTES + len(SPECIALS)

    @property
    def vocab_size(self) -> int:
        return self.first_merge_id + len(self.merges)

    @property
    def special_ids(self) -> tuple[int, ...]:
        return (self.pad_id, self.eos_id, self.inst_open_id, self.inst_close_id)

    def _encode_chunk(self, chunk: bytes) -> list[int]:
        cached = self._cache.get(chunk)
        if cached is not None:
            return cached
        ids = list(chunk)
        while len(ids) > 1:
            best = None
            for pair in zip(ids, ids[1:]):
                new_id = self._ranks.get(pair)
                if new_id is not None and (best is None or new_id < best[1]):
                    best = (pair, new_id)
            if best is None:
                break
            ids = _merge(ids, best[0], best[1])
        self._cache[chunk] = ids
        return ids

    def encode(self, text: str | bytes) -> list[int]:
        data = text.encode("utf-8") if isinstance(text, str) else bytes(text)
        out: list[int] = []
        for chunk in _CHUNK.findall(data):
            out.extend(self._encode_chunk(chunk))
        return out

    def decode_bytes(self, ids) -> bytes:
        return b"".join(self.vocab[int(i)] for i in ids)

    def decode(self, ids) -> str:
        return self.decode_bytes(ids).decode("utf-8", errors="replace")

    # ------------------------------------------------------------ persistence
    def to_dict(self) -> dict:
        return {"type": "byte_bpe", "specials": list(SPECIALS), "merges": [list(m) for m in self.merges]}

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n")

    @classmethod
    def load(cls, path) -> "Tokenizer":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        if not isinstance(data, dict) or data.get("type") != "byte_bpe" or tuple(data.get("specials", ())) != SPECIALS:
            raise ConfigError(f"{path}: not a byte-level BPE tokenizer file")
        return cls([tuple(m) for m in data["merges"]])

    def fingerprint(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


def _merge(ids: list[int], pair: tuple[int, int], new_id: int) -> list[int]:
    out = []
    i = 0
    n = len(ids)
    while i < n:
        if i + 1 < n and ids[i] == pair[0] and ids[i + 1] == pair[1]:
            out.append(new_id)
            i += 2
        else:
            out.append(ids[i])
            i += 1
    return out


def bpe_train(corpus, vocab_size: int, seed: int = 0) -> Tokenizer:
    """Learn merges until ``vocab_size`` ids exist or no pair repeats.

    The most frequent adjacent pair wins; ties go to the lexicographically
    smallest pair of byte strings. The procedure has no randomness, ``seed``
    is accepted for interface symmetry with the other trainers.
    """
    del seed
    texts = list(corpus)
    if not texts or not any(texts):
        raise ValueError("bpe_train: corpus is empty")
    min_size = N_BYTES + len(SPECIALS)
    if vocab_size < min_size:
        raise ValueError(f"vocab_size must be >= {min_size}")
    chunk_counts: Counter[bytes] = Counter()
    for text in texts:
        data = text.encode("utf-8") if isinstance(text, str) else bytes(text)
        chunk_counts.update(_CHUNK.findall(data))

    words = [list(c) for c in chunk_counts]
    freqs = list(chunk_counts.values())
    vocab: dict[int, bytes] = {i: bytes([i]) for i in range(N_BYTES)}
    merges: list[tuple[int, int]] = []
    next_id = min_size
    while next_id < vocab_size:
        pair_counts: Counter[tuple[int, int]] = Counter()
        for w, f in zip(words, freqs):
            for pair in zip(w, w[1:]):
                pair_counts[pair] += f
        if not pair_counts:
            break
        top = max(pair_counts.values())
        if top < 2:
            break
        best = min((p for p, c in pair_counts.items() if c == top),
                   key=lambda p: (vocab[p[0]], vocab[p[1]]))
        merges.append(best)
        vocab[next_id] = vocab[best[0]] + vocab[best[1]]
        words = [_merge(w, best, next_id) if len(w) > 1 else w for w in words]
        next_id += 1
    return Tokenizer(merges)
