import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.stats import norm

from ctxembed import tensor as T
from ctxembed.tensor import EmptyPoolError, ShapeError, Tensor, no_grad

from gradcheck import check, leaf


def f64(x, grad=True):
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=grad, dtype=np.float64)


@pytest.mark.parametrize("x, want", [(0.0, 0.0), (1.0, norm.cdf(1.0)), (-1.0, -norm.cdf(-1.0)), (3.0, 3 * norm.cdf(3.0))])
def test_gelu_is_x_times_normal_cdf(x, want):
    assert T.gelu(f64([x], grad=False)).data[0] == pytest.approx(want, rel=1e-12, abs=1e-15)


def test_elementwise_grads(rng):
    a, b = leaf(rng, 3, 4), leaf(rng, 3, 4)
    pos = Tensor(rng.uniform(0.5, 2.0, size=(3, 4)), requires_grad=True, dtype=np.float64)
    assert check(lambda a, b: a * b + a - b, [a, b], rng) < 1e-7
    assert check(lambda p: T.log(p) + T.sqrt(p) + T.reciprocal(p) + T.exp(p), [pos], rng) < 1e-7
    assert check(lambda a: a / 3.0 - 2.0, [a], rng) < 1e-7


def test_bias_broadcast_grad(rng):
    x, b = leaf(rng, 2, 3, 4), leaf(rng, 4)
    assert check(lambda x, b: x + b, [x, b], rng) < 1e-7


def test_structural_grads(rng):
    x = leaf(rng, 2, 5, 3)
    assert check(lambda x: x.transpose(0, 2, 1).reshape(2, 15), [x], rng) < 1e-7
    assert check(lambda x: x[:, 1:4].sum(axis=1), [x], rng) < 1e-7
    assert check(lambda x: x.mean(axis=-1, keepdims=True), [x], rng) < 1e-7
    assert check(lambda x: T.concat([x, x * 2.0], axis=1), [x], rng) < 1e-7
    assert check(lambda x: T.gather_rows(x, [[0, 0], [4, 1]]), [x], rng) < 1e-7
    rows = leaf(rng, 2, 2, 3)
    assert check(lambda x, r: T.scatter_rows(x, r, [[1, 3], [0, 2]]), [x, rows], rng) < 1e-7
    w = rng.uniform(size=(2, 5))
    assert check(lambda x: T.weighted_rows(x, w), [x], rng) < 1e-7
    assert check(lambda x: T.l2_normalize(x), [x], rng) < 1e-7


def test_take_accumulates_repeated_ids(rng):
    table = leaf(rng, 6, 3)
    out = T.take(table, np.array([[1, 1, 2]]))
    out.sum().backward()
    assert np.allclose(table.grad[1], 2.0) and np.allclose(table.grad[2], 1.0) and np.allclose(table.grad[0], 0.0)


def test_matmul_matches_numpy_and_batched_grad(rng):
    a, w = leaf(rng, 2, 3, 4), leaf(rng, 4, 5)
    assert np.allclose(T.matmul(a, w).data, a.data @ w.data)
    assert check(T.matmul, [a, w], rng) < 1e-7
    b = leaf(rng, 2, 4, 2)
    assert check(T.matmul, [a, b], rng) < 1e-7


def test_masked_softmax_zeroes_masked_entries(rng):
    x = f64(rng.normal(size=(3, 5)), grad=False)
    mask = rng.uniform(size=(3, 5)) > 0.4
    mask[:, 0] = True
    p = T.softmax(x, mask=mask).data
    assert np.all(p[~mask] == 0.0)
    assert np.allclose(p.sum(axis=-1), 1.0)
    lp = T.log_softmax(x, mask=mask).data
    assert np.all(lp[~mask] == 0.0)
    assert np.allclose(np.exp(lp)[mask], p[mask])


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (4, 6), elements=st.floats(-30, 30)))
def test_softmax_rows_are_distributions(x):
    p = T.softmax(Tensor(x, dtype=np.float64)).data
    assert np.all(p >= 0)
    assert np.allclose(p.sum(axis=-1), 1.0)
    assert np.allclose(np.exp(T.log_softmax(Tensor(x, dtype=np.float64)).data), p)


def test_layer_norm_matches_definition(rng):
    x = rng.normal(size=(4, 7))
    g, b = rng.normal(size=7), rng.normal(size=7)
    got = T.layer_norm(f64(x, False), f64(g, False), f64(b, False)).data
    want = (x - x.mean(-1, keepdims=True)) / np.sqrt(x.var(-1, keepdims=True) + 1e-5) * g + b
    assert np.allclose(got, want, atol=1e-12)


def test_narrow_broadcasting_rejected():
    a = Tensor(np.ones((3, 4)))
    with pytest.raises(ShapeError):
        a + Tensor(np.ones((3, 1)))
    with pytest.raises(ShapeError):
        T.matmul(a, Tensor(np.ones((3, 4))))


def test_dtype_mismatch_rejected():
    with pytest.raises(TypeError):
        Tensor(np.ones(3), dtype=np.float32) + Tensor(np.ones(3), dtype=np.float64)


def test_non_finite_results_raise():
    with pytest.raises(FloatingPointError):
        T.log(Tensor(np.array([0.0, 1.0])))


def test_grad_accumulates_across_backward_calls():
    x = f64([1.0, 2.0])
    (x * x).sum().backward()
    (x * x).sum().backward()
    assert np.allclose(x.grad, [4.0, 8.0])
    x.zero_grad()
    assert x.grad is None


def test_shared_subexpression_gradients_add():
    x = f64([3.0])
    y = x * x
    (y + y * x).sum().backward()  # d/dx (x^2 + x^3) = 2x + 3x^2
    assert x.grad[0] == pytest.approx(2 * 3 + 3 * 9)


def test_backward_needs_scalar():
    with pytest.raises(ValueError):
        (f64([1.0, 2.0]) * 2.0).backward()


def test_no_grad_records_nothing():
    x = f64([1.0])
    with no_grad():
        y = x * 2.0
    assert not y.requires_grad and y.is_leaf
    assert T.is_grad_enabled()


def test_mean_pool_and_empty_mask():
    x = f64([[1.0, 2.0], [3.0, 4.0], [100.0, 100.0]], False)
    assert np.allclose(T.mean_pool(x, [True, True, False]).data, [[2.0, 3.0]])
    with pytest.raises(EmptyPoolError):
        T.mean_pool(x, [False, False, False])


def test_deep_chain_has_no_recursion_limit():
    x = f64([1.0])
    y = x
    for _ in range(5000):
        y = y * 1.0
    y.sum().backward()
    assert x.grad[0] == 1.0


def test_gelu_grad_matches_closed_form():
    xs = np.linspace(-4, 4, 17)
    x = f64(xs)
    T.gelu(x).sum().backward()
    want = norm.cdf(xs) + xs * np.exp(-xs ** 2 / 2) / math.sqrt(2 * math.pi)
    assert np.allclose(x.grad, want, atol=1e-12)
