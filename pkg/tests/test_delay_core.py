import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from delaybsde.delay_core import (
    DelayMeasure,
    SegmentFrame,
    delay_average,
    fubini_identity_check,
    make_grid,
    point_mass,
    snap_measure,
)
from delaybsde.errors import InvalidArgument


def test_grid_uniform():
    g = make_grid(1.0, 4)
    np.testing.assert_array_equal(g.times, [0, 0.25, 0.5, 0.75, 1.0])
    assert g.dt == 0.25 and g.n_points == 5


def test_grid_single_step():
    np.testing.assert_array_equal(make_grid(2.0, 1).times, [0.0, 2.0])


@pytest.mark.parametrize("T,N", [(1.0, 0), (0.0, 4), (-1.0, 3), (1.0, -2)])
def test_grid_rejects_bad_input(T, N):
    with pytest.raises(InvalidArgument):
        make_grid(T, N)


@given(st.floats(0.01, 100), st.integers(1, 500))
def test_grid_invariants(T, N):
    g = make_grid(T, N)
    assert g.times[0] == 0 and g.times[-1] == T
    assert np.all(np.diff(g.times) > 0)
    np.testing.assert_allclose(np.diff(g.times), T / N, rtol=1e-9)


def test_snap_point_mass_zero():
    m = snap_measure([(0, 1)], make_grid(1.0, 8))
    assert m.atoms == [(0.0, 1.0)] and m.is_point_mass_at_zero


def test_snap_merges_neighbours():
    m = snap_measure([(-0.26, 0.5), (-0.24, 0.5)], make_grid(1.0, 4))
    assert m.atoms == [(-0.25, 1.0)]


def test_snap_renormalizes():
    m = snap_measure([(-0.5, 2), (0, 2)], make_grid(1.0, 4))
    assert m.atoms == [(-0.5, 0.5), (0.0, 0.5)]


def test_snap_ties_toward_zero():
    g = make_grid(1.0, 4)
    assert snap_measure([(-0.125, 1)], g).atoms == [(0.0, 1.0)]
    assert snap_measure([(-0.375, 1)], g).atoms == [(-0.25, 1.0)]


@pytest.mark.parametrize("atoms", [[], [(0.1, 1)], [(-1.5, 1)], [(-0.5, 0)], [(-0.5, -1)]])
def test_snap_errors(atoms):
    with pytest.raises(InvalidArgument):
        snap_measure(atoms, make_grid(1.0, 4))


def test_measure_validation():
    with pytest.raises(InvalidArgument):
        DelayMeasure((0.0,), (0.7,), (0,), 0.25, 1.0)


@st.composite
def measures(draw, grid):
    n = draw(st.integers(1, 5))
    lags = draw(st.lists(st.floats(-grid.horizon, 0.0), min_size=n, max_size=n))
    ws = draw(st.lists(st.floats(0.01, 10.0), min_size=n, max_size=n))
    return snap_measure(list(zip(lags, ws)), grid)


GRID = make_grid(1.0, 20)


@given(measures(GRID))
def test_snapped_measure_is_probability_on_grid(m):
    assert abs(sum(m.weights) - 1) <= 1e-12
    assert all(w > 0 for w in m.weights)
    assert len(set(m.lags)) == len(m.lags)
    for lag, off in zip(m.lags, m.offsets):
        assert -GRID.n_steps <= off <= 0
        assert lag == off * GRID.dt


def test_delay_average_delta0_bit_exact(rng):
    vals = rng.standard_normal((21, 30, 2))
    m = point_mass(GRID)
    for i in range(21):
        out = delay_average(SegmentFrame(vals, i), m)
        assert np.array_equal(out, vals[i])


def test_delay_average_extension_at_origin(rng):
    vals = rng.standard_normal((21, 10))
    m = snap_measure([(-1.0, 0.5), (0.0, 0.5)], GRID)
    np.testing.assert_array_equal(delay_average(SegmentFrame(vals, 0), m), vals[0])


def test_delay_average_matches_brute_force(rng):
    vals = rng.standard_normal((21, 7))
    m = snap_measure([(-0.3, 0.2), (-0.75, 0.5), (0.0, 0.3)], GRID)
    tr = np.tanh
    for i in range(21):
        got = delay_average(SegmentFrame(vals, i), m, tr)
        for p in range(7):
            ref = 0.0
            for lag, w in m.atoms:
                j = i + int(round(lag / GRID.dt))
                ref += w * math.tanh(vals[max(j, 0), p])
            assert abs(got[p] - ref) <= 1e-15


def test_z_channel_extension_is_zero(rng):
    vals = rng.standard_normal((20, 4, 1, 1))
    f = SegmentFrame(vals, 3, "Z")
    assert np.all(f.lookup(-5) == 0)
    np.testing.assert_array_equal(f.lookup(-2), vals[1])


@given(measures(GRID), st.integers(0, 20), st.integers(0, 2**32 - 1))
def test_extension_total(m, i, seed):
    vals = np.random.default_rng(seed).standard_normal((21, 3))
    f = SegmentFrame(vals, i)
    for off in m.offsets:
        out = f.lookup(off)
        if i + off < 0:
            np.testing.assert_array_equal(out, vals[0])
    fz = SegmentFrame(vals[:20], min(i, 19), "Z")
    for off in m.offsets:
        if min(i, 19) + off < 0:
            assert np.all(fz.lookup(off) == 0)


@given(measures(GRID), st.integers(0, 20), st.integers(0, 2**32 - 1), st.floats(-3, 3))
def test_delay_average_linear_and_monotone(m, i, seed, a):
    r = np.random.default_rng(seed)
    v1, v2 = r.standard_normal((21, 5)), r.standard_normal((21, 5))
    f1, f2 = SegmentFrame(v1, i), SegmentFrame(v2, i)
    lin = delay_average(SegmentFrame(a * v1 + v2, i), m)
    np.testing.assert_allclose(lin, a * delay_average(f1, m) + delay_average(f2, m), atol=1e-12)
    hi = SegmentFrame(v1 + np.abs(v2), i)
    assert np.all(delay_average(hi, m) >= delay_average(f1, m))


def test_fubini_constants():
    m = snap_measure([(-0.4, 0.3), (0.0, 0.7)], GRID)
    lhs, rhs = fubini_identity_check(np.ones(21), m, GRID)
    assert lhs == pytest.approx(1.0, abs=1e-14) and rhs == pytest.approx(1.0, abs=1e-14)
    assert fubini_identity_check(np.zeros(21), m, GRID) == (0.0, 0.0)


def test_fubini_three_atoms(rng):
    g = make_grid(2.0, 40)
    m = snap_measure([(-2.0, 1 / 3), (-1.0, 1 / 3), (0.0, 1 / 3)], g)
    lhs, rhs = fubini_identity_check(rng.standard_normal(41), m, g)
    assert abs(lhs - rhs) <= 1e-12 * max(abs(lhs), 1.0)


@given(measures(GRID), st.integers(0, 2**32 - 1), st.sampled_from(["Y", "Z"]))
def test_fubini_property(m, seed, channel):
    h = np.random.default_rng(seed).standard_normal(21 if channel == "Y" else 20)
    lhs, rhs = fubini_identity_check(h, m, GRID, channel)
    assert abs(lhs - rhs) <= 1e-12 * max(abs(lhs), abs(rhs), 1.0)
