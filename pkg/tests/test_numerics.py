import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from rkbinn.numerics import (DimensionError, RankDeficientError, make_rng, matvec, ridge_least_squares,
                             standardize_stats)

finite = st.floats(-1e3, 1e3, allow_nan=False)


def test_matvec_examples():
    assert np.array_equal(matvec(np.eye(3), [1, 2, 3]), [1, 2, 3])
    assert np.array_equal(matvec(np.zeros((2, 3)), [4, 5, 6]), [0, 0])
    assert np.array_equal(matvec([[1, 2], [3, 4]], [1, 1]), [3, 7])


def test_matvec_dimension_mismatch():
    with pytest.raises(DimensionError):
        matvec(np.eye(3), [1, 2])


@given(arrays(np.float64, st.integers(1, 8), elements=finite))
def test_matvec_identity(v):
    assert np.array_equal(matvec(np.eye(len(v)), v), v)


def test_ridge_examples():
    b = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
    assert np.allclose(ridge_least_squares(np.eye(3), b), b)
    assert np.allclose(ridge_least_squares([[1.0], [2.0]], [[2.0], [4.0]]), [[2.0]])
    assert abs(ridge_least_squares([[1.0]], [[1.0]], 1e12)[0, 0]) < 1e-10


def test_ridge_matches_normal_equations(rng):
    a = rng.standard_normal((30, 4))
    b = rng.standard_normal((30, 2))
    lam = 0.7
    expected = np.linalg.solve(a.T @ a + lam * np.eye(4), a.T @ b)
    assert np.allclose(ridge_least_squares(a, b, lam), expected, atol=1e-12)


def test_ridge_rank_deficient_without_penalty():
    a = np.array([[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]])
    with pytest.raises(RankDeficientError, match="rank 1"):
        ridge_least_squares(a, np.ones(3))
    assert np.all(np.isfinite(ridge_least_squares(a, np.ones(3), 1e-8)))


@given(st.integers(0, 2 ** 31), st.integers(3, 12), st.integers(1, 3))
def test_ridge_residual_orthogonal(seed, n_extra, p):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((p + n_extra, p))
    b = rng.standard_normal((p + n_extra, 2))
    x = ridge_least_squares(a, b)
    assert np.all(np.abs(a.T @ (b - a @ x)) < 1e-9)


def test_standardize_examples():
    m, s = standardize_stats([[1.0, 2.0, 3.0]])
    assert np.array_equal(m, [1, 2, 3]) and np.array_equal(s, [1, 1, 1])
    m, s = standardize_stats([[0.0], [2.0]])
    assert m[0] == 1.0 and s[0] == 1.0
    with pytest.raises(ValueError):
        standardize_stats(np.zeros((0, 2)))


def test_standardize_gaussian_sample():
    x = make_rng(5, "gauss").standard_normal((10_000, 3))
    m, s = standardize_stats(x)
    assert np.all(np.abs(m) < 0.1) and np.all(np.abs(s - 1) < 0.1)


def test_rng_streams_reproducible_and_label_separated():
    a = make_rng(7, "init").standard_normal(100)
    assert np.array_equal(a, make_rng(7, "init").standard_normal(100))
    assert not np.array_equal(a, make_rng(7, "shuffle").standard_normal(100))
    assert not np.array_equal(a, make_rng(8, "init").standard_normal(100))
