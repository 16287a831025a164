"""Ranking, correlation and clustering metrics for the evaluation suite.

Ties in any score-based ranking are broken by input order (stable sort).
"""

from __future__ import annotations

import math
from typing import Mapping, Sequence

import numpy as np


class UndefinedMetricError(ValueError):
    """The metric has no defined value for this input (e.g. zero variance)."""


def ndcg_at_k(ranked_ids: Sequence, qrels: Mapping, k: int = 10) -> float:
    """nDCG@k with linear gain ``rel`` and discount ``1 / log2(rank + 1)``.

    ``qrels`` maps doc id -> relevance (a set or list means relevance 1).
    Returns 0 when the query has no relevant documents.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    rels = _as_rel_map(qrels)
    ideal = sorted((r for r in rels.values() if r > 0), reverse=True)[:k]
    if not ideal:
        return 0.0
    dcg = sum(rels.get(doc, 0.0) / math.log2(rank + 2) for rank, doc in enumerate(list(ranked_ids)[:k]))
    idcg = sum(r / math.log2(rank + 2) for rank, r in enumerate(ideal))
    return dcg / idcg


def average_precision(ranked_ids: Sequence, relevant) -> float:
    """Mean of precision@rank over the ranks of relevant documents, divided by |relevant|."""
    rel = {d for d, r in _as_rel_map(relevant).items() if r > 0}
    if not rel:
        return 0.0
    hits, total = 0, 0.0
    for rank, doc in enumerate(ranked_ids, start=1):
        if doc in rel:
            hits += 1
            total += hits / rank
    return total / len(rel)


def mean_average_precision(rankings: Mapping | Sequence, qrels: Mapping | Sequence) -> float:
    """MAP over queries; ``rankings`` and ``qrels`` are keyed (or indexed) by query."""
    keys = list(rankings.keys()) if isinstance(rankings, Mapping) else list(range(len(rankings)))
    if not keys:
        return 0.0
    return float(np.mean([average_precision(rankings[q], qrels[q]) for q in keys]))


def average_precision_pairs(scores, labels) -> float:
    """AP of binary ``labels`` ranked by descending ``scores``."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(int)
    if labels.sum() == 0:
        raise UndefinedMetricError("average precision needs at least one positive label")
    order = np.argsort(-scores, kind="stable")
    ranked = labels[order]
    hits = np.cumsum(ranked)
    prec = hits / np.arange(1, len(ranked) + 1)
    return float((prec * ranked).sum() / ranked.sum())


def fractional_ranks(x) -> np.ndarray:
    """1-based ranks with ties sharing their average rank."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="stable")
    xs = x[order]
    ranks = np.empty(len(x))
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and xs[j + 1] == xs[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman(x, y) -> float:
    """Pearson correlation of fractional ranks."""
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("spearman needs two 1-d sequences of equal length")
    if len(x) < 2:
        raise UndefinedMetricError("spearman needs at least two points")
    rx, ry = fractional_ranks(x), fractional_ranks(y)
    rx -= rx.mean()
    ry -= ry.mean()
    denom = math.sqrt(float(rx @ rx) * float(ry @ ry))
    if denom == 0.0:
        raise UndefinedMetricError("spearman is undefined when either side has zero rank variance")
    return float(np.clip((rx @ ry) / denom, -1.0, 1.0))


def _entropy(counts: np.ndarray) -> float:
    n = counts.sum()
    p = counts[counts > 0] / n
    return float(-(p * np.log(p)).sum())


def homogeneity_completeness_v(pred, gold) -> tuple[float, float, float]:
    pred, gold = np.asarray(pred), np.asarray(gold)
    if pred.shape != gold.shape:
        raise ValueError("label arrays must have equal length")
    _, ci = np.unique(gold, return_inverse=True)
    _, ki = np.unique(pred, return_inverse=True)
    table = np.zeros((ci.max() + 1, ki.max() + 1))
    np.add.at(table, (ci, ki), 1)
    n = table.sum()
    h_c = _entropy(table.sum(axis=1))
    h_k = _entropy(table.sum(axis=0))
    nz = table > 0
    joint = table[nz] / n
    col = np.broadcast_to(table.sum(axis=0), table.shape)[nz] / n
    row = np.broadcast_to(table.sum(axis=1)[:, None], table.shape)[nz] / n
    h_c_given_k = float(-(joint * np.log(joint / col)).sum())
    h_k_given_c = float(-(joint * np.log(joint / row)).sum())
    hom = 1.0 if h_c == 0 else 1.0 - h_c_given_k / h_c
    comp = 1.0 if h_k == 0 else 1.0 - h_k_given_c / h_k
    v = 0.0 if hom + comp == 0 else 2 * hom * comp / (hom + comp)
    return hom, comp, v


def v_measure(pred, gold) -> float:
    """Harmonic mean of homogeneity and completeness."""
    return homogeneity_completeness_v(pred, gold)[2]


def kmeans(x, k: int, seed: int = 0, max_iter: int = 100) -> np.ndarray:
    """Lloyd's algorithm with k-means++ seeding; deterministic for a seed."""
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    if k < 1 or k > n:
        raise ValueError(f"kmeans: k={k} must be between 1 and the number of points ({n})")
    rng = np.random.default_rng(seed)
    centers = [x[rng.integers(n)]]
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        idx = rng.choice(n, p=d2 / total) if total > 0 else int(rng.integers(n))
        centers.append(x[idx])
        d2 = np.minimum(d2, ((x - x[idx]) ** 2).sum(axis=1))
    c = np.array(centers)
    labels = np.full(n, -1)
    for _ in range(max_iter):
        dist = ((x[:, None, :] - c[None, :, :]) ** 2).sum(axis=2)
        new = dist.argmin(axis=1)
        if np.array_equal(new, labels):
            break
        labels = new
        for j in range(k):
            members = x[labels == j]
            if len(members):
                c[j] = members.mean(axis=0)
    return labels


def classify_accuracy(train_x, train_y, test_x, test_y, epochs: int = 100, lr: float = 0.1) -> float:
    """Accuracy of multinomial logistic regression fit by full-batch gradient descent.

    No regularization. Test labels never seen in training simply count as
    errors.
    """
    train_x = np.asarray(train_x, dtype=np.float64)
    test_x = np.asarray(test_x, dtype=np.float64)
    if not len(train_x) or not len(test_x):
        raise ValueError("classify_accuracy needs non-empty train and test sets")
    classes, y = np.unique(np.asarray(train_y), return_inverse=True)
    n, d = train_x.shape
    W = np.zeros((d, len(classes)))
    b = np.zeros(len(classes))
    onehot = np.eye(len(classes))[y]
    for _ in range(epochs):
        logits = train_x @ W + b
        logits -= logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True)
        g = (p - onehot) / n
        W -= lr * (train_x.T @ g)
        b -= lr * g.sum(axis=0)
    pred = classes[np.argmax(test_x @ W + b, axis=1)]
    return float(np.mean(pred == np.asarray(test_y)))


def rank_by_scores(scores, ids) -> list:
    """Ids sorted by descending score, ties kept in input order."""
    order = np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")
    return [ids[i] for i in order]


def _as_rel_map(qrels) -> dict:
    if isinstance(qrels, Mapping):
        return {k: float(v) for k, v in qrels.items()}
    return {d: 1.0 for d in qrels}
