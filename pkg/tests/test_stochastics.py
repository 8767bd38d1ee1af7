import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import quad
from scipy.stats import norm

from delaybsde.delay_core import make_grid
from delaybsde.errors import InvalidArgument, NumericalFailure
from delaybsde.stochastics import (
    RegressionBasis,
    conditional_expectation,
    mc_norm,
    mean_stderr,
    simulate,
)


@pytest.fixture(scope="module")
def big():
    return simulate(make_grid(1.0, 10), 100_000, dim=2, seed=3)


def test_increment_mean_clt_bound(big):
    dt, M = big.grid.dt, big.n_paths
    means = big.dW.mean(axis=1)
    assert np.all(np.abs(means) <= 4 * math.sqrt(dt / M))


def test_terminal_variance(big):
    var = big.W[-1].var(axis=0, ddof=1)
    assert np.all(np.abs(var - 1.0) <= 0.05)


def test_paths_start_at_zero_and_increments_match(big):
    assert np.all(big.W[0] == 0)
    assert np.array_equal(np.diff(big.W, axis=0), big.dW)


def test_determinism():
    g = make_grid(1.0, 8)
    a, b = simulate(g, 1000, seed=11, chunk_size=100), simulate(g, 1000, seed=11, chunk_size=100)
    assert np.array_equal(a.W, b.W) and np.array_equal(a.dW, b.dW)
    c = simulate(g, 1000, seed=12, chunk_size=100)
    assert not np.array_equal(a.W, c.W)


def test_chunks_are_independent_streams():
    g = make_grid(1.0, 8)
    a = simulate(g, 300, seed=5, chunk_size=100)
    b = simulate(g, 100, seed=5, chunk_size=100)
    # the first chunk does not depend on how many paths follow it
    assert np.array_equal(a.W[:, :100], b.W)


@pytest.mark.parametrize("kw", [dict(n_paths=0), dict(dim=0), dict(seed=-1), dict(chunk_size=0)])
def test_simulate_errors(kw):
    args = dict(n_paths=10, dim=1, seed=0, chunk_size=4)
    args.update(kw)
    with pytest.raises(InvalidArgument):
        simulate(make_grid(1.0, 4), **args)


@pytest.fixture(scope="module")
def ens():
    return simulate(make_grid(1.0, 20), 10_000, seed=21)


@pytest.mark.parametrize("basis", [RegressionBasis("polynomial", 3), RegressionBasis("bins", 10)])
def test_constant_target_reproduced(ens, basis):
    for i in (0, 5, 20):
        out = conditional_expectation(np.full(ens.n_paths, 2.5), ens, i, basis)
        np.testing.assert_allclose(out, 2.5, rtol=0, atol=1e-13)


def test_time_zero_is_sample_mean(ens):
    y = ens.W[-1, :, 0] ** 2
    out = conditional_expectation(y, ens, 0, RegressionBasis())
    assert np.all(out == y.mean())


@pytest.mark.parametrize("degree,guard", [(1, 0.0), (3, 1.0)])
def test_martingale_projection_rmse(ens, degree, guard):
    # the conditional expectation is exactly W(t_i), which lies in the basis span;
    # the guard covers the extra estimation noise of the unused higher monomials
    T, M = 1.0, ens.n_paths
    basis = RegressionBasis("polynomial", degree)
    for i in (1, 5, 10, 15, 19):
        t = ens.grid.times[i]
        fit = conditional_expectation(ens.W[-1, :, 0], ens, i, basis)
        rmse = math.sqrt(np.mean((fit - ens.W[i, :, 0]) ** 2))
        assert rmse <= 3 * math.sqrt((T - t) / M) * (1 + guard)


def test_multi_column_targets(ens):
    basis = RegressionBasis("polynomial", 2)
    y = np.column_stack([ens.W[-1, :, 0], ens.W[-1, :, 0] ** 2])
    both = conditional_expectation(y, ens, 7, basis)
    for c in range(2):
        np.testing.assert_allclose(both[:, c], conditional_expectation(y[:, c], ens, 7, basis),
                                   atol=1e-12)


def test_backward_martingale_has_zero_mean(ens):
    basis = RegressionBasis("polynomial", 3)
    y = ens.W[-1, :, 0]
    for i in range(ens.grid.n_steps - 1, -1, -1):
        y = conditional_expectation(y, ens, i, basis)
    se = ens.W[-1, :, 0].std(ddof=1) / math.sqrt(ens.n_paths)
    assert abs(y[0]) <= 3 * se


def test_tower_property_nested_bins(ens):
    # bins of the same state at the same time: the projection is idempotent,
    # and with degree 0 projections at any time collapse to the mean; no ridge,
    # so the nesting is exact up to rounding
    basis = RegressionBasis("bins", 8, ridge=0.0)
    y = np.exp(ens.W[-1, :, 0])
    once = conditional_expectation(y, ens, 10, basis)
    twice = conditional_expectation(once, ens, 10, basis)
    np.testing.assert_allclose(twice, once, rtol=1e-12)
    flat = RegressionBasis("polynomial", 0)
    inner = conditional_expectation(y, ens, 15, flat)
    np.testing.assert_allclose(conditional_expectation(inner, ens, 5, flat),
                               conditional_expectation(y, ens, 5, flat), rtol=1e-13)


def test_tower_property_polynomial(ens):
    # W(t_j) projected onto polynomials at t_i gives W(t_i) up to regression noise,
    # same as projecting W(T) directly
    basis = RegressionBasis("polynomial", 1)
    inner = conditional_expectation(ens.W[-1, :, 0], ens, 15, basis)
    a = conditional_expectation(inner, ens, 5, basis)
    b = conditional_expectation(ens.W[-1, :, 0], ens, 5, basis)
    assert math.sqrt(np.mean((a - b) ** 2)) <= 3 * math.sqrt(1.0 / ens.n_paths)


def test_rank_deficient_design_raises(ens):
    basis = RegressionBasis("polynomial", 2, ridge=0.0)
    dup = ens.W[4, :, 0]
    with pytest.raises(NumericalFailure, match="time_index=4"):
        conditional_expectation(ens.W[-1, :, 0], ens, 4, basis, extra_features=dup)


def test_ridge_makes_duplicate_design_solvable(ens):
    out = conditional_expectation(ens.W[-1, :, 0], ens, 4, RegressionBasis("polynomial", 2),
                                  extra_features=ens.W[4, :, 0])
    assert np.all(np.isfinite(out))


def test_basis_validation():
    with pytest.raises(InvalidArgument):
        RegressionBasis("splines")
    with pytest.raises(InvalidArgument):
        RegressionBasis("bins", 0)
    with pytest.raises(InvalidArgument):
        RegressionBasis(ridge=-1)


def test_mc_norm_examples():
    assert mc_norm(np.ones(17), 3.0) == 1.0
    assert mc_norm([0.0, 2.0], 1.0) == 1.0
    with pytest.raises(InvalidArgument):
        mc_norm([1.0], 0)


def test_mc_norm_gaussian_third_moment():
    oracle = quad(lambda x: abs(x) ** 3 * norm.pdf(x), -np.inf, np.inf)[0] ** (1 / 3)
    assert oracle == pytest.approx((2 * math.sqrt(2 / math.pi)) ** (1 / 3), rel=1e-10)
    x = np.random.default_rng(0).standard_normal(100_000)
    assert abs(mc_norm(np.abs(x), 3.0) / oracle - 1) <= 0.05


@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=50), st.floats(0.1, 5))
def test_mc_norm_homogeneous(vals, p):
    v = np.array(vals)
    assert mc_norm(3 * v, p) == pytest.approx(3 ** min(1, p) * mc_norm(v, p), rel=1e-9, abs=1e-300)


def test_mean_stderr():
    m, se = mean_stderr([1.0, 3.0])
    assert m == 2.0 and se == pytest.approx(1.0)
    assert math.isnan(mean_stderr([1.0])[1])
