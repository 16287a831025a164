import numpy as np
import pytest

from ctxembed import metrics as M

import oracles as O


def random_ranking(rng, n_docs=6):
    docs = [f"d{i}" for i in range(n_docs)]
    ranked = list(rng.permutation(docs))
    judged = rng.choice(docs, size=rng.integers(0, 5), replace=False)
    rels = {d: float(rng.integers(0, 4)) for d in judged}
    return ranked, rels


def test_ndcg_examples():
    assert M.ndcg_at_k(["a", "b", "c"], {"a": 1}) == 1.0
    assert M.ndcg_at_k(["x", "y", "a"], {"a": 1}) == 0.5
    assert M.ndcg_at_k(["x"] * 1 + [f"z{i}" for i in range(12)], {"a": 1}) == 0.0
    assert M.ndcg_at_k(["a"], {}) == 0.0
    with pytest.raises(ValueError):
        M.ndcg_at_k(["a"], {"a": 1}, k=0)


def test_map_and_ap_examples():
    assert M.mean_average_precision([["a", "x", "b"]], [{"a", "b"}]) == (1 / 1 + 2 / 3) / 2
    assert round(M.mean_average_precision([["a", "x", "b"]], [{"a", "b"}]), 6) == 0.833333
    assert M.average_precision(["a", "b", "x"], {"a", "b"}) == 1.0
    assert M.average_precision_pairs([0.9, 0.5, 0.1], [1, 0, 1]) == (1 / 1 + 2 / 3) / 2
    assert M.average_precision_pairs([0.3, 0.2, 0.1], [1, 1, 0]) == 1.0
    with pytest.raises(M.UndefinedMetricError):
        M.average_precision_pairs([0.1, 0.2], [0, 0])


def test_ap_ties_keep_input_order():
    assert M.average_precision_pairs([0.5, 0.5], [0, 1]) == 0.5
    assert M.average_precision_pairs([0.5, 0.5], [1, 0]) == 1.0


def test_spearman_examples():
    assert M.spearman([1, 2, 3], [1, 2, 3]) == 1.0
    assert M.spearman([1, 2, 3], [3, 2, 1]) == -1.0
    assert M.spearman([1, 2, 3], [1, 3, 2]) == 0.5
    with pytest.raises(M.UndefinedMetricError):
        M.spearman([1, 2, 3], [4, 4, 4])
    with pytest.raises(M.UndefinedMetricError):
        M.spearman([1], [1])


def test_fractional_ranks_average_ties():
    assert M.fractional_ranks([10, 20, 10, 30]).tolist() == [1.5, 3.0, 1.5, 4.0]


def test_v_measure_examples():
    assert M.v_measure([1, 1, 0, 0], [0, 0, 1, 1]) == 1.0
    assert M.v_measure([0, 0, 0, 0], [0, 0, 1, 1]) == 0.0


@pytest.mark.parametrize("seed", range(5))
def test_metrics_against_brute_force(seed):
    rng = np.random.default_rng(seed)
    for _ in range(100):
        ranked, rels = random_ranking(rng)
        k = int(rng.integers(1, 8))
        assert M.ndcg_at_k(ranked, rels, k) == pytest.approx(O.ndcg_brute(ranked, rels, k), abs=1e-9)
        relevant = [d for d, r in rels.items() if r > 0]
        assert M.average_precision(ranked, relevant) == pytest.approx(O.ap_brute(ranked, relevant), abs=1e-9)
        n = int(rng.integers(3, 12))
        x, y = rng.integers(0, 5, n).astype(float), rng.normal(size=n)
        if len(set(x)) > 1:
            assert M.spearman(x, y) == pytest.approx(O.spearman_ref(x, y), abs=1e-9)
        labels = rng.integers(0, 2, n)
        if labels.any():
            scores = np.round(rng.normal(size=n), 1)
            assert M.average_precision_pairs(scores, labels) == pytest.approx(O.ap_pairs_brute(scores, labels), abs=1e-9)
        pred, gold = rng.integers(0, 3, n), rng.integers(0, 4, n)
        assert M.v_measure(pred, gold) == pytest.approx(O.v_measure_ref(pred, gold), abs=1e-9)


def test_invariances(rng):
    ranked, rels = ["a", "b", "c", "d"], {"b": 2.0, "d": 1.0}
    rename = {"a": "w", "b": "x", "c": "y", "d": "z"}
    assert M.ndcg_at_k(ranked, rels) == M.ndcg_at_k([rename[d] for d in ranked], {rename[d]: r for d, r in rels.items()})
    assert M.average_precision(ranked, rels) == M.average_precision([rename[d] for d in ranked], {rename[d] for d in rels})
    pred, gold = rng.integers(0, 3, 20), rng.integers(0, 3, 20)
    perm = np.array([2, 0, 1])
    assert M.v_measure(perm[pred], gold) == pytest.approx(M.v_measure(pred, gold), abs=1e-12)
    assert M.v_measure(pred, perm[gold]) == pytest.approx(M.v_measure(pred, gold), abs=1e-12)


def test_metric_ranges(rng):
    for _ in range(50):
        ranked, rels = random_ranking(rng)
        assert 0.0 <= M.ndcg_at_k(ranked, rels) <= 1.0
        x, y = rng.normal(size=6), rng.normal(size=6)
        assert -1.0 <= M.spearman(x, y) <= 1.0
        assert 0.0 <= M.v_measure(rng.integers(0, 3, 9), rng.integers(0, 3, 9)) <= 1.0


def test_kmeans(rng):
    a = rng.normal(size=(20, 2)) + [10, 10]
    b = rng.normal(size=(20, 2)) - [10, 10]
    x = np.vstack([a, b])
    gold = [0] * 20 + [1] * 20
    labels = M.kmeans(x, 2, seed=0)
    assert M.v_measure(labels, gold) == 1.0
    assert np.array_equal(labels, M.kmeans(x, 2, seed=0))
    assert set(M.kmeans(x, 1).tolist()) == {0}
    with pytest.raises(ValueError):
        M.kmeans(x[:3], 4)


def test_classify_accuracy(rng):
    x = np.vstack([rng.normal(size=(15, 3)) + 4, rng.normal(size=(15, 3)) - 4])
    y = [0] * 15 + [1] * 15
    assert M.classify_accuracy(x, y, x, y) == 1.0
    const = np.ones((10, 3))
    yc = [0] * 7 + [1] * 3
    assert M.classify_accuracy(const, yc, const, yc) == 0.7
    assert M.classify_accuracy(x, y, x[:2], [5, 5]) == 0.0


def test_rank_by_scores_stable():
    assert M.rank_by_scores([0.1, 0.5, 0.5, 0.9], ["a", "b", "c", "d"]) == ["d", "b", "c", "a"]
