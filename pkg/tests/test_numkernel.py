import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hielo.numkernel import (DimensionError, NumericError, Parameter, adam_step, cross_entropy,
                             cross_entropy_columns, finite_diff_grad, log_mean_exp_columns,
                             matmul, relative_error, sigmoid, softmax_columns, softmax_rows, tanh_)


def test_matmul_examples():
    m = np.arange(9.0).reshape(3, 3)
    assert np.array_equal(matmul(np.eye(3), m), m)
    assert np.array_equal(matmul(np.zeros((2, 3)), np.ones((3, 4))), np.zeros((2, 4)))
    assert np.array_equal(matmul(np.array([[1.0, 2.0], [3.0, 4.0]]), np.ones((2, 1))),
                          np.array([[3.0], [7.0]]))


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 2\)"):
        matmul(np.ones((2, 3)), np.ones((2, 2)))


def test_nonlinearities():
    assert sigmoid(np.zeros((1, 1)))[0, 0] == 0.5
    assert tanh_(np.zeros((1, 1)))[0, 0] == 0.0
    s = sigmoid(np.array([[-20.0]]))[0, 0]
    assert 0.0 < s < 1e-6


def test_softmax_examples():
    assert np.allclose(softmax_rows(np.ones((1, 4))), 0.25)
    big = softmax_rows(np.array([[1000.0, 0.0]]))
    assert np.all(np.isfinite(big)) and big[0, 0] == pytest.approx(1.0) and big[0, 1] < 1e-300
    assert np.allclose(softmax_rows(np.log(np.array([[1.0, 3.0]]))), [[0.25, 0.75]], atol=1e-15)


def test_softmax_columns_matches_rows():
    x = np.random.default_rng(0).normal(size=(5, 3))
    assert np.allclose(softmax_columns(x), softmax_rows(x.T).T)


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 12)),
              elements=st.floats(-50, 50)))
def test_softmax_rows_sum_to_one(x):
    assert np.allclose(softmax_rows(x).sum(axis=1), 1.0, atol=1e-12, rtol=0)


def test_cross_entropy_examples():
    loss, _ = cross_entropy(np.array([[0.0, 1.0, 0.0]]), 1)
    assert loss == pytest.approx(0.0, abs=1e-15)
    V = 7
    loss, grad = cross_entropy(np.full((1, V), 1.0 / V), 3)
    assert loss == pytest.approx(math.log(V), rel=1e-15)
    assert abs(grad.sum()) < 1e-12
    with pytest.raises(IndexError):
        cross_entropy(np.full((1, 3), 1 / 3), 3)


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, st.integers(2, 20), elements=st.floats(-30, 30)), st.data())
def test_cross_entropy_gradient_sums_to_zero(logits, data):
    target = data.draw(st.integers(0, logits.size - 1))
    _, grad = cross_entropy(softmax_rows(logits[None, :]), target)
    assert abs(grad.sum()) < 1e-12


def test_cross_entropy_columns_agrees_with_rowwise():
    rng = np.random.default_rng(1)
    probs = softmax_columns(rng.normal(size=(6, 4)))
    targets = np.array([0, 5, 2, 2])
    w = np.array([1.0, 0.5, 0.0, 2.0])
    loss, grad = cross_entropy_columns(probs, targets, w)
    expect_loss = 0.0
    for b in range(4):
        lb, gb = cross_entropy(probs[:, b], int(targets[b]))
        expect_loss += w[b] * lb
        assert np.allclose(grad[:, b], w[b] * gb)
    assert loss == pytest.approx(expect_loss)


def test_log_mean_exp_columns_both_branches():
    rng = np.random.default_rng(2)
    for scale in (0.01, 5.0):
        z = rng.normal(scale=scale, size=(9, 3))
        ref = np.log(np.exp(z).mean(axis=0))
        assert np.allclose(log_mean_exp_columns(z), ref, rtol=1e-13, atol=1e-15)


def test_adam_null_update():
    p = Parameter("w", np.array([[0.3, -0.2]]))
    before = p.value.copy()
    adam_step(p)
    assert np.array_equal(p.value, before)
    assert p.step_count == 1


def test_adam_first_step_closed_form():
    g = np.array([[0.5, -2.0, 1e-3]])
    p = Parameter("w", np.zeros((1, 3)))
    p.grad[...] = g
    adam_step(p, lr=1e-3)
    assert np.allclose(-p.value, 1e-3 * g / (np.abs(g) + 1e-8), rtol=1e-12)
    assert not p.grad.any()


def _scalar_adam(gs, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8):
    x = m = v = 0.0
    for t, g in enumerate(gs, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        x -= lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
    return x


def test_adam_matches_scalar_recurrence():
    gs = [0.7, 0.7, -0.1, 3.0, 0.02]
    p = Parameter("w", np.zeros((1, 1)))
    for k, g in enumerate(gs):
        p.grad[0, 0] = g
        adam_step(p, lr=1e-2)
        assert p.value[0, 0] == pytest.approx(_scalar_adam(gs[:k + 1], lr=1e-2), rel=1e-12)
    # Two equal gradients: Adam moves 2*lr, plain SGD would move 2*lr*g.
    p = Parameter("w", np.zeros((1, 1)))
    for _ in range(2):
        p.grad[0, 0] = 0.7
        adam_step(p)
    assert -p.value[0, 0] / (2 * 1e-3 * 0.7) == pytest.approx(1 / 0.7, rel=1e-6)


def test_adam_rejects_non_finite():
    p = Parameter("w", np.zeros((1, 2)))
    p.grad[0, 1] = np.nan
    with pytest.raises(NumericError):
        adam_step(p)
    assert p.step_count == 0 and not p.value.any()


def test_parameter_invariants():
    p = Parameter.uniform("w", (3, 4), np.random.default_rng(0))
    assert p.value.shape == p.grad.shape == p.m.shape == p.v.shape == (3, 4)
    assert np.all(np.abs(p.value) <= 0.1)
    with pytest.raises(DimensionError):
        Parameter("bad", np.zeros(3))


def test_finite_diff_analytic_cases():
    p = Parameter("x", np.array([[1.5, -2.0, 0.25]]))
    quad = finite_diff_grad(lambda q: 0.5 * float((q.value ** 2).sum()), p)
    assert np.allclose(quad, p.value, atol=1e-9)
    c = np.array([[3.0, -1.0, 0.5]])
    lin = finite_diff_grad(lambda q: float((c * q.value).sum()), p)
    assert np.allclose(lin, c, atol=1e-9)


def test_relative_error():
    assert relative_error(np.ones(3), np.ones(3)) == 0.0
    assert relative_error(np.array([1.0, 0.0]), np.array([0.0, 0.0])) == 1.0
    assert relative_error(np.zeros(2), np.full(2, 1e-12)) < 1e-11
