import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mixweights.errors import DimensionMismatch, NotPositiveDefinite
from mixweights.linalg import cholesky, matmul, solve_spd


def triple_loop(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            s = 0.0
            for k in range(a.shape[1]):
                s += a[i, k] * b[k, j]
            out[i, j] = s
    return out


def test_matmul_identity(rng):
    m = rng.normal(size=(3, 3))
    assert np.array_equal(matmul(np.eye(3), m), m)


def test_matmul_hand_example():
    assert np.array_equal(matmul([[1, 2], [3, 4]], [[0], [1]]), [[2], [4]])


def test_matmul_matches_triple_loop(rng):
    a = rng.normal(size=(5, 4))
    b = rng.normal(size=(4, 3))
    np.testing.assert_allclose(matmul(a, b), triple_loop(a, b), rtol=1e-13, atol=1e-13)


def test_matmul_shape_mismatch():
    with pytest.raises(DimensionMismatch):
        matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_matmul_associative(rng):
    for _ in range(20):
        a, b, c = rng.normal(size=(4, 5)), rng.normal(size=(5, 3)), rng.normal(size=(3, 6))
        left = matmul(matmul(a, b), c)
        right = matmul(a, matmul(b, c))
        assert np.linalg.norm(left - right) <= 1e-10 * np.linalg.norm(left)


def test_solve_identity(rng):
    b = rng.normal(size=4)
    np.testing.assert_allclose(solve_spd(np.eye(4), b), b)


def test_solve_diagonal():
    np.testing.assert_allclose(solve_spd(np.diag([4.0, 9.0]), [8.0, 27.0]), [2.0, 3.0])


def test_solve_random_spd_residual(rng):
    m = rng.normal(size=(5, 5))
    a = m.T @ m + np.eye(5)
    b = rng.normal(size=5)
    x = solve_spd(a, b)
    assert np.linalg.norm(a @ x - b) <= 1e-8 * np.linalg.norm(b)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 12), st.integers(0, 2**32 - 1))
def test_solve_residual_property(n, seed):
    r = np.random.default_rng(seed)
    m = r.normal(size=(n + 3, n))
    a = m.T @ m + 1e-3 * np.eye(n)
    b = r.normal(size=n)
    x = solve_spd(a, b)
    assert np.linalg.norm(a @ x - b) <= 1e-8 * np.linalg.norm(b)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 10), st.floats(0.0, 6.0), st.integers(0, 2**32 - 1))
def test_recovers_x_up_to_condition_1e6(n, log_cond, seed):
    r = np.random.default_rng(seed)
    q, _ = np.linalg.qr(r.normal(size=(n, n)))
    eig = np.logspace(0, log_cond, n)
    a = (q * eig) @ q.T
    a = 0.5 * (a + a.T)
    x = r.normal(size=n)
    got = solve_spd(a, a @ x)
    assert np.linalg.norm(got - x) <= 1e-7 * np.linalg.norm(x)


def test_not_positive_definite():
    with pytest.raises(NotPositiveDefinite):
        solve_spd(np.array([[1.0, 2.0], [2.0, 1.0]]), [1.0, 1.0])


def test_singular_pivot_threshold():
    a = np.array([[1.0, 1.0], [1.0, 1.0 + 1e-13]])
    with pytest.raises(NotPositiveDefinite):
        cholesky(a)


def test_asymmetric_rejected():
    with pytest.raises(NotPositiveDefinite):
        cholesky(np.array([[2.0, 1.0], [0.0, 2.0]]))


def test_solve_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        solve_spd(np.eye(3), np.ones(2))
    with pytest.raises(DimensionMismatch):
        solve_spd(np.ones((2, 3)), np.ones(2))
