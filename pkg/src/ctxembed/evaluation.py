"""Desk-scale evaluation over the seven embedding task families.

Task spec files are JSON objects::

    {"name": "toy-retrieval", "type": "retrieval",
     "instruction": "Given a query, retrieve relevant passages.",
     "queries": "queries.jsonl", "corpus": "corpus.jsonl", "qrels": "qrels.jsonl"}

Supported types and their data keys:

* ``retrieval`` (nDCG@10), ``reranking`` (MAP): ``queries`` {qid, text},
  ``corpus`` {did, text}, ``qrels`` {qid, did, rel}
* ``pair_classification`` (AP): ``pairs`` {a, b, label}
* ``sts``, ``summarization`` (Spearman): ``pairs`` {a, b, score}
* ``classification`` (accuracy): ``train`` and ``test`` {text, label}
* ``clustering`` (V-measure): ``data`` {text, label}

Relative paths resolve against the spec file's directory. When the spec has
no ``instruction`` the task name is looked up in the instruction map.
Instructions go on queries only for retrieval and reranking; the other
families are symmetric and instruct every text.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import metrics as M
from .config import ConfigError
from .data import read_jsonl

Embedder = Callable[[list, str], np.ndarray]

TASK_METRICS = {
    "retrieval": "ndcg_at_10",
    "reranking": "map",
    "clustering": "v_measure",
    "pair_classification": "ap",
    "classification": "accuracy",
    "sts": "spearman",
    "summarization": "spearman",
}
ASYMMETRIC = ("retrieval", "reranking")


@dataclass
class RetrievalTask:
    queries: dict  # qid -> text
    corpus: dict  # did -> text
    qrels: dict  # qid -> {did: rel}

    def __post_init__(self):
        for qid, rels in self.qrels.items():
            missing = [d for d in rels if d not in self.corpus]
            if missing:
                raise ValueError(f"qrels for {qid!r} reference unknown documents {missing[:3]}")


@dataclass
class LabeledSet:
    texts: list
    labels: list

    def __post_init__(self):
        if len(self.texts) != len(self.labels):
            raise ValueError("texts and labels must have equal length")


@dataclass
class PairSet:
    pairs: list  # (a, b, label-or-score)

    def __post_init__(self):
        if not self.pairs:
            raise ValueError("pair set is empty")


@dataclass
class TaskSpec:
    name: str
    type: str
    data: object
    instruction: str | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.type not in TASK_METRICS:
            raise ConfigError(f"unknown task type {self.type!r}; expected one of {sorted(TASK_METRICS)}")


def make_embedder(model, tokenizer, batch_size: int = 64) -> Embedder:
    def embed(texts, instruction: str = "") -> np.ndarray:
        return model.embed_text(tokenizer, list(texts), instruction, batch_size)
    return embed


# ------------------------------------------------------------------ families
def eval_retrieval(embed: Embedder, task: RetrievalTask, instruction: str, metric: str = "ndcg_at_10",
                   k: int = 10) -> float:
    qids, dids = list(task.queries), list(task.corpus)
    q = embed([task.queries[i] for i in qids], instruction)
    d = embed([task.corpus[i] for i in dids], "")
    scores = q @ d.T
    values = []
    for row, qid in zip(scores, qids):
        ranked = M.rank_by_scores(row, dids)
        rels = task.qrels.get(qid, {})
        if metric == "map":
            values.append(M.average_precision(ranked, rels))
        else:
            values.append(M.ndcg_at_k(ranked, rels, k))
    return float(np.mean(values))


def eval_pairs(embed: Embedder, task: PairSet, instruction: str, kind: str) -> float:
    a = embed([p[0] for p in task.pairs], instruction)
    b = embed([p[1] for p in task.pairs], instruction)
    cos = np.sum(a * b, axis=1)
    gold = [p[2] for p in task.pairs]
    if kind == "pair_classification":
        return M.average_precision_pairs(cos, gold)
    return M.spearman(cos, gold)


def eval_classification(embed: Embedder, train: LabeledSet, test: LabeledSet, instruction: str) -> float:
    return M.classify_accuracy(embed(train.texts, instruction), train.labels,
                               embed(test.texts, instruction), test.labels)


def eval_clustering(embed: Embedder, task: LabeledSet, instruction: str, seed: int = 0) -> float:
    k = len(set(task.labels))
    pred = M.kmeans(embed(task.texts, instruction), k, seed=seed)
    return M.v_measure(pred, task.labels)


def resolve_instruction(task: TaskSpec, instructions: dict | None) -> str:
    if task.instruction is not None:
        return task.instruction
    if instructions and task.name in instructions:
        return instructions[task.name]
    raise ConfigError(f"no instruction for task {task.name!r}")


def run_task(embed: Embedder, task: TaskSpec, instructions: dict | None = None) -> dict:
    """Embed the task's texts, compute its family metric and return a JSON-able report."""
    instruction = resolve_instruction(task, instructions)
    t = task.type
    if t in ASYMMETRIC:
        value = eval_retrieval(embed, task.data, instruction, "map" if t == "reranking" else "ndcg_at_10")
        size = {"queries": len(task.data.queries), "corpus": len(task.data.corpus)}
    elif t in ("pair_classification", "sts", "summarization"):
        value = eval_pairs(embed, task.data, instruction, t)
        size = {"pairs": len(task.data.pairs)}
    elif t == "classification":
        train, test = task.data
        value = eval_classification(embed, train, test, instruction)
        size = {"train": len(train.texts), "test": len(test.texts)}
    else:
        value = eval_clustering(embed, task.data, instruction, task.extra.get("seed", 0))
        size = {"texts": len(task.data.texts)}
    return {"task": task.name, "type": t, "metric": TASK_METRICS[t], "value": float(value),
            "size": size, "instruction": instruction}


# ------------------------------------------------------------------- loading
def _labeled(path) -> LabeledSet:
    rows = read_jsonl(path)
    return LabeledSet([r["text"] for r in rows], [r["label"] for r in rows])


def load_task(path) -> TaskSpec:
    """Read a task spec JSON file and the JSONL data it points to."""
    path = Path(path)
    try:
        spec = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    base = path.parent
    t = spec.get("type")
    if t not in TASK_METRICS:
        raise ConfigError(f"{path}: unknown task type {t!r}")

    def p(key):
        if key not in spec:
            raise ConfigError(f"{path}: task type {t} needs a {key!r} file")
        return base / spec[key]

    if t in ASYMMETRIC:
        queries = {str(r["qid"]): r["text"] for r in read_jsonl(p("queries"))}
        corpus = {str(r["did"]): r["text"] for r in read_jsonl(p("corpus"))}
        qrels: dict = {}
        for r in read_jsonl(p("qrels")):
            qrels.setdefault(str(r["qid"]), {})[str(r["did"])] = float(r.get("rel", 1))
        data = RetrievalTask(queries, corpus, qrels)
    elif t in ("pair_classification", "sts", "summarization"):
        key = "label" if t == "pair_classification" else "score"
        data = PairSet([(r["a"], r["b"], r[key]) for r in read_jsonl(p("pairs"))])
    elif t == "classification":
        data = (_labeled(p("train")), _labeled(p("test")))
    else:
        data = _labeled(p("data"))
    known = {"name", "type", "instruction", "queries", "corpus", "qrels", "pairs", "train", "test", "data", "seed"}
    unknown = sorted(set(spec) - known)
    if unknown:
        raise ConfigError(f"{path}: unknown keys {unknown}")
    extra = {"seed": spec["seed"]} if "seed" in spec else {}
    return TaskSpec(spec.get("name", path.stem), t, data, spec.get("instruction"), extra)
