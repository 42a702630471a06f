import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from highway_em.errors import ShapeError
from highway_em.numerics import (
    l2_normalize_rows,
    logsumexp_rows,
    matmul,
    softmax_rows,
    squared_distances,
)

finite_matrices = arrays(
    np.float64,
    st.tuples(st.integers(1, 8), st.integers(1, 6)),
    elements=st.floats(-50, 50),
)


def test_matmul_identity():
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(matmul(np.eye(2), a), a)


def test_matmul_annihilator():
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(matmul(a, np.zeros((2, 3))), np.zeros((2, 3)))


def test_matmul_hand_arithmetic():
    out = matmul(np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([[5.0], [6.0]]))
    assert np.array_equal(out, np.array([[17.0], [39.0]]))


def test_matmul_shape_error():
    with pytest.raises(ShapeError):
        matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_matmul_rejects_nan():
    with pytest.raises(ShapeError):
        matmul(np.array([[np.nan]]), np.ones((1, 1)))


def test_matmul_bitwise_deterministic(rng):
    a = rng.standard_normal((37, 23))
    b = rng.standard_normal((23, 41))
    first = matmul(a, b)
    second = matmul(a, b)
    assert first.dtype == np.float64
    assert np.array_equal(first, second)


def test_softmax_symmetric_row():
    out = softmax_rows(np.array([[0.0, 0.0]]))
    assert np.allclose(out, [[0.5, 0.5]], atol=1e-15)


def test_softmax_no_overflow_on_huge_logits():
    out = softmax_rows(np.array([[1000.0, 0.0]]))
    assert np.isfinite(out).all()
    assert out[0, 0] > 1.0 - 1e-12
    assert out[0, 1] < 1e-12


def test_softmax_log_ratio():
    out = softmax_rows(np.log(np.array([[1.0, 3.0]])))
    assert np.allclose(out, [[0.25, 0.75]], atol=1e-15)


@given(finite_matrices)
@settings(max_examples=60)
def test_softmax_rows_are_stochastic(logits):
    out = softmax_rows(logits)
    assert np.all(out >= 0.0) and np.all(out <= 1.0)
    assert np.abs(out.sum(axis=1) - 1.0).max() <= 1e-12


@given(finite_matrices, st.floats(-30, 30))
@settings(max_examples=60)
def test_softmax_shift_invariance(logits, shift):
    shifted = softmax_rows(logits + shift)
    assert np.abs(shifted - softmax_rows(logits)).max() <= 1e-12


def test_logsumexp_single_element_exact():
    assert logsumexp_rows(np.array([[-3.7]]))[0] == -3.7


def test_logsumexp_equal_entries():
    out = logsumexp_rows(np.array([[2.5, 2.5]]))
    assert math.isclose(out[0], 2.5 + math.log(2.0), rel_tol=0, abs_tol=1e-14)


def test_logsumexp_direct_value():
    out = logsumexp_rows(np.array([[0.0, math.log(3.0)]]))
    assert math.isclose(out[0], math.log(4.0), rel_tol=0, abs_tol=1e-14)


@given(finite_matrices)
@settings(max_examples=60)
def test_logsumexp_bounds(logits):
    out = logsumexp_rows(logits)
    row_max = logits.max(axis=1)
    assert np.all(out >= row_max)
    assert np.all(out <= row_max + math.log(logits.shape[1]) + 1e-12)


def test_squared_distances_self_zero_diagonal(rng):
    x = rng.standard_normal((5, 3))
    d2 = squared_distances(x, x)
    assert np.allclose(np.diag(d2), 0.0)
    assert d2.min() >= 0.0


def test_squared_distances_3_4_5():
    d2 = squared_distances(np.array([[0.0, 0.0]]), np.array([[3.0, 4.0]]))
    assert d2[0, 0] == 25.0


def test_squared_distances_matches_norm_expansion(rng):
    # independent oracle: ||x||^2 - 2 x.mu + ||mu||^2
    x = rng.standard_normal((4, 3))
    mu = rng.standard_normal((2, 3))
    expansion = (
        (x * x).sum(axis=1)[:, None]
        - 2.0 * x @ mu.T
        + (mu * mu).sum(axis=1)[None, :]
    )
    assert np.abs(squared_distances(x, mu) - expansion).max() <= 1e-12


def test_squared_distances_shape_error():
    with pytest.raises(ShapeError):
        squared_distances(np.ones((4, 3)), np.ones((2, 2)))


def test_l2_normalize_rows(rng):
    a = rng.standard_normal((6, 4))
    norms = np.linalg.norm(l2_normalize_rows(a), axis=1)
    assert np.abs(norms - 1.0).max() <= 1e-12
