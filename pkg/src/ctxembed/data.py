"""JSONL ingestion for training and evaluation data."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path


class DataFormatError(ValueError):
    """A data file line could not be parsed."""


@dataclass
class TrainingExample:
    query: str
    positive: str
    hard_negatives: list[str] = field(default_factory=list)
    task: str = "default"

    def __post_init__(self):
        if not self.query or not self.positive:
            raise ValueError("query and positive must be non-empty")


def read_jsonl(path) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataFormatError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(obj, dict):
                raise DataFormatError(f"{path}:{lineno}: expected a JSON object")
            rows.append(obj)
    return rows


def write_jsonl(path, rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")


def load_training_jsonl(path) -> list[TrainingExample]:
    """Parse ``{"query", "positive", "negatives"?, "task"?}`` lines in file order.

    Duplicate lines are kept.
    """
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                negs = obj.get("negatives") or []
                if not isinstance(negs, list):
                    raise TypeError("negatives must be a list")
                out.append(TrainingExample(obj["query"], obj["positive"], [str(n) for n in negs],
                                           obj.get("task") or "default"))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError, AttributeError) as exc:
                raise DataFormatError(f"{path}:{lineno}: malformed training example ({exc})") from exc
    return out


def save_training_jsonl(path, examples) -> None:
    write_jsonl(path, ({"query": e.query, "positive": e.positive, "negatives": e.hard_negatives,
                        "task": e.task} for e in examples))


def group_by_task(examples) -> dict[str, list[TrainingExample]]:
    groups: dict[str, list[TrainingExample]] = {}
    for ex in examples:
        groups.setdefault(ex.task, []).append(ex)
    return groups


def ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p
