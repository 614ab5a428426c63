import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fluxpop.ipf import IpfInfeasibleError, harmonize_targets, ipf_fit


def random_targets(rng, m, n, zero_frac=0.0):
    rows = rng.uniform(0.5, 100.0, m)
    cols = rng.uniform(0.5, 100.0, n)
    if zero_frac:
        rows[rng.random(m) < zero_frac] = 0.0
        cols[rng.random(n) < zero_frac] = 0.0
    return rows, harmonize_targets(rows, cols)


def test_harmonize_examples():
    assert harmonize_targets([3, 1], [1, 1]).tolist() == [2.0, 2.0]
    assert harmonize_targets([5], [5]).tolist() == [5.0]
    with pytest.raises(ValueError, match="zero total"):
        harmonize_targets([0, 0], [1, 1])
    with pytest.raises(ValueError, match="zero total"):
        harmonize_targets([1, 1], [0, 0])


def test_ones_seed_independence_table():
    x, rep = ipf_fit(np.ones((2, 2)), [3, 1], [2, 2])
    np.testing.assert_allclose(x, [[1.5, 1.5], [0.5, 0.5]], rtol=0, atol=1e-12)
    assert rep.converged and rep.iterations == 1


def test_structured_seed_matches_cross_ratio_solution():
    # Fitting preserves the seed's cross-ratio (1*4)/(2*3); with the given
    # margins that leaves a quadratic a^2 + 42a - 160 = 0 for the top-left cell.
    x, rep = ipf_fit([[1, 2], [3, 4]], [10, 10], [8, 12])
    a = math.sqrt(601) - 21
    expected = np.array([[a, 10 - a], [8 - a, 2 + a]])
    assert rep.converged
    np.testing.assert_allclose(x, expected, rtol=1e-8)
    np.testing.assert_allclose(x.sum(axis=1), [10, 10], rtol=1e-8)
    np.testing.assert_allclose(x.sum(axis=0), [8, 12], rtol=1e-8)


def test_structured_seed_matches_exact_rational_iteration():
    # frozen output of an independent Fraction-arithmetic row/column loop
    frozen = [[3.5153013442625256, 6.484698655737474], [4.484698655737474, 5.515301344262526]]
    x, _ = ipf_fit([[1, 2], [3, 4]], [10, 10], [8, 12])
    np.testing.assert_allclose(x, frozen, rtol=1e-8)
    tight, rep = ipf_fit([[1, 2], [3, 4]], [10, 10], [8, 12], tol=1e-15, max_iter=200)
    np.testing.assert_allclose(tight, frozen, rtol=1e-12)


def test_zero_row_target_gives_zero_row():
    x, _ = ipf_fit([[2.0, 7.0], [1.0, 3.0]], [0, 4], [1, 3])
    assert np.all(x[0] == 0.0)
    np.testing.assert_allclose(x.sum(axis=0), [1, 3], rtol=1e-8)


def test_infeasible_slice_is_named():
    with pytest.raises(IpfInfeasibleError, match="row 1"):
        ipf_fit([[1, 1], [0, 0]], [1, 1], [1, 1])
    with pytest.raises(IpfInfeasibleError, match="column 0"):
        ipf_fit([[0, 1], [0, 1]], [1, 1], [1, 1])


def test_unharmonized_targets_rejected():
    with pytest.raises(ValueError, match="harmonized"):
        ipf_fit(np.ones((2, 2)), [1, 1], [1, 2])
    with pytest.raises(ValueError):
        ipf_fit(np.ones((2, 3)), [1, 1], [1, 1])


def test_max_iter_returns_best_iterate_unconverged():
    seed = np.array([[1.0, 1e-6], [1e-6, 1.0]])
    x, rep = ipf_fit(seed, [1, 2], [2, 1], tol=1e-14, max_iter=2)
    assert not rep.converged
    assert rep.iterations == 2
    assert np.all(np.isfinite(x))


@given(
    st.integers(1, 12),
    st.integers(1, 12),
    st.floats(0.01, 1e3),
    st.integers(0, 2**32 - 1),
)
@settings(max_examples=60, deadline=None)
def test_rank_one_closed_form(m, n, c, seed):
    rng = np.random.default_rng(seed)
    rows, cols = random_targets(rng, m, n)
    x, rep = ipf_fit(np.full((m, n), c), rows, cols)
    closed = np.outer(rows, cols) / rows.sum()
    assert rep.converged
    np.testing.assert_allclose(x, closed, rtol=1e-10, atol=1e-10)


@given(st.integers(2, 15), st.integers(2, 15), st.integers(0, 2**32 - 1))
@settings(max_examples=60, deadline=None)
def test_marginals_and_zero_preservation(m, n, seed):
    rng = np.random.default_rng(seed)
    rows, cols = random_targets(rng, m, n)
    seed_matrix = rng.uniform(0.1, 5.0, (m, n))
    # knock out cells but keep the diagonal band so every slice stays supported
    mask = rng.random((m, n)) < 0.3
    for i in range(m):
        mask[i, i % n] = False
    for j in range(n):
        mask[j % m, j] = False
    seed_matrix[mask] = 0.0
    x, rep = ipf_fit(seed_matrix, rows, cols, max_iter=5000)
    assert np.all(x[mask] == 0.0)
    assert np.all(x >= 0)
    if rep.converged:
        assert np.all(np.abs(x.sum(axis=1) - rows) <= 1e-8 * np.maximum(1, rows))
        assert np.all(np.abs(x.sum(axis=0) - cols) <= 1e-8 * np.maximum(1, cols))
    assert rep.converged == (rep.max_row_residual <= rep.tol and rep.max_col_residual <= rep.tol)


@given(st.integers(1, 10), st.integers(1, 10), st.integers(-6, 6), st.integers(0, 2**32 - 1))
@settings(max_examples=60, deadline=None)
def test_scale_equivariance_exact(m, n, power, seed):
    # powers of two scale every float operation exactly
    rng = np.random.default_rng(seed)
    rows, cols = random_targets(rng, m, n)
    seed_matrix = rng.uniform(0.1, 5.0, (m, n))
    lam = 2.0**power
    x, rep = ipf_fit(seed_matrix, rows, cols, tol=1e-12, max_iter=200)
    y, rep2 = ipf_fit(seed_matrix, rows * lam, cols * lam, tol=1e-12, max_iter=200)
    if rep.iterations == rep2.iterations:
        assert np.array_equal(y, x * lam)
    else:  # the max(1, target) residual floor can change the stopping sweep
        np.testing.assert_allclose(y, x * lam, rtol=1e-10)


@given(st.integers(1, 10), st.integers(1, 10), st.floats(0.1, 50), st.integers(0, 2**32 - 1))
@settings(max_examples=40, deadline=None)
def test_scale_equivariance_general(m, n, lam, seed):
    rng = np.random.default_rng(seed)
    rows, cols = random_targets(rng, m, n)
    seed_matrix = rng.uniform(0.1, 5.0, (m, n))
    x, _ = ipf_fit(seed_matrix, rows, cols, tol=1e-13, max_iter=5000)
    y, _ = ipf_fit(seed_matrix, rows * lam, cols * lam, tol=1e-13, max_iter=5000)
    np.testing.assert_allclose(y, x * lam, rtol=1e-8)


@given(st.integers(2, 12), st.integers(2, 12), st.integers(0, 2**32 - 1))
@settings(max_examples=60, deadline=None)
def test_column_residual_non_increasing(m, n, seed):
    rng = np.random.default_rng(seed)
    rows, cols = random_targets(rng, m, n)
    x, rep = ipf_fit(rng.uniform(0.1, 5.0, (m, n)), rows, cols)
    hist = np.array(rep.history)
    assert np.all(np.diff(hist) <= 1e-9 * max(1.0, rows.sum()))


def test_zero_seed_cells_remain_exactly_zero_with_zero_targets():
    seed = np.array([[0.0, 1.0, 2.0], [3.0, 0.0, 1.0], [1.0, 1.0, 0.0]])
    x, _ = ipf_fit(seed, [3, 0, 5], [4, 4, 0])
    assert x[0, 0] == x[1, 1] == x[2, 2] == 0.0
    assert np.all(x[1] == 0.0) and np.all(x[:, 2] == 0.0)
