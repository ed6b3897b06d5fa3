import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from framepool.losses import HuberParams, huber_grad_scalar, huber_scalar, multilabel_loss

finite = st.floats(min_value=-1e6, max_value=1e6, allow_nan=False)
deltas = st.floats(min_value=1e-3, max_value=1e3)


def test_scalar_values():
    assert huber_scalar(0.0, 1.0) == 0.0
    assert huber_scalar(0.0, 3.7) == 0.0
    np.testing.assert_allclose(huber_scalar(1.0, 1.0), math.sqrt(2) - 1, rtol=1e-12)
    np.testing.assert_allclose(huber_scalar(2.0, 2.0), 4 * (math.sqrt(2) - 1), rtol=1e-12)


def test_grad_values():
    assert huber_grad_scalar(0.0, 1.0) == 0.0
    np.testing.assert_allclose(huber_grad_scalar(1.0, 1.0), 1 / math.sqrt(2), rtol=1e-12)
    # Bounded: approaches delta from below as the residual grows.
    np.testing.assert_allclose(huber_grad_scalar(1e12, 2.5), 2.5, rtol=1e-9)
    assert abs(huber_grad_scalar(1e3 * 2.5, 2.5)) < 2.5


def test_nonpositive_delta_rejected():
    with pytest.raises(ValueError):
        huber_scalar(1.0, 0.0)
    with pytest.raises(ValueError):
        huber_grad_scalar(1.0, -1.0)


@settings(max_examples=200)
@given(finite, deltas)
def test_symmetric_and_nonnegative(a, delta):
    la = huber_scalar(a, delta)
    assert la >= 0
    np.testing.assert_allclose(la, huber_scalar(-a, delta), rtol=1e-12, atol=0)


@settings(max_examples=200)
@given(finite, finite, deltas)
def test_monotone_in_magnitude(a, b, delta):
    lo, hi = sorted([abs(a), abs(b)])
    assert huber_scalar(lo, delta) <= huber_scalar(hi, delta) + 1e-15


@settings(max_examples=200)
@given(st.floats(min_value=-10, max_value=10), deltas)
def test_quadratic_regime_taylor_bound(a, delta):
    # |L(a) - a^2/2| <= a^4 / (8 delta^2), valid for every a.  The slack term
    # covers float cancellation when the true gap sits below eps * a^2.
    gap = abs(huber_scalar(a, delta) - a * a / 2)
    assert gap <= a**4 / (8 * delta * delta) + 1e-15 * a * a + 1e-15


@settings(max_examples=100)
@given(deltas)
def test_linear_regime(delta):
    a = 1e4 * delta
    ratio = huber_scalar(a, delta) / (delta * a)
    assert abs(1 - ratio) < 1e-4


@settings(max_examples=200)
@given(finite, deltas)
def test_gradient_strictly_bounded(a, delta):
    # Strict in exact arithmetic; float64 saturates to delta itself once
    # (a/delta)^2 falls below machine epsilon of 1, so allow equality there.
    g = abs(huber_grad_scalar(a, delta))
    assert g <= delta
    if abs(a) <= 1e3 * delta:
        assert g < delta


def test_multilabel_perfect_predictions():
    y = np.array([[1, 0, 1], [0, 0, 1]])
    loss, grad = multilabel_loss(y.astype(np.float64), y)
    assert loss == 0.0
    assert np.all(grad == 0.0)


def test_multilabel_reference_value():
    p = np.array([[0.5, 0.5]])
    y = np.array([[1, 0]])
    loss, grad = multilabel_loss(p, y, HuberParams(delta=1.0))
    np.testing.assert_allclose(loss, math.sqrt(1.25) - 1, rtol=1e-12)
    np.testing.assert_allclose(loss, 0.1180340, atol=5e-8)
    assert grad.shape == (1, 2)


def test_multilabel_grad_matches_finite_differences():
    rng = np.random.default_rng(0)
    p = rng.uniform(0.05, 0.95, size=(3, 5))
    y = (rng.uniform(size=(3, 5)) < 0.4).astype(np.int64)
    params = HuberParams(delta=0.7)
    _, grad = multilabel_loss(p, y, params)
    h = 1e-6
    for b in range(3):
        for l in range(5):
            bumped = p.copy(); bumped[b, l] += h
            dipped = p.copy(); dipped[b, l] -= h
            fd = (multilabel_loss(bumped, y, params)[0]
                  - multilabel_loss(dipped, y, params)[0]) / (2 * h)
            np.testing.assert_allclose(grad[b, l], fd, rtol=1e-6, atol=1e-12)


def test_multilabel_shape_mismatch_rejected():
    with pytest.raises(ValueError, match="shape"):
        multilabel_loss(np.zeros((2, 3)), np.zeros((3, 2)))


def test_multilabel_nonbinary_targets_rejected():
    with pytest.raises(ValueError, match="binary"):
        multilabel_loss(np.full((1, 2), 0.5), np.array([[0.5, 1.0]]))
