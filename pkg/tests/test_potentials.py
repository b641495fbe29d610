import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from waveguide_stability.geometry import build_cross_section, build_grid, build_nested_subdomains
from waveguide_stability.potentials import (
    PotentialField,
    check_admissible,
    japanese_bracket,
    make_test_pair,
    smooth_bump,
    sobolev_order,
    sobolev_surrogate,
    tail_l2_sq,
    weighted_sup_norm,
)


@pytest.fixture(scope="module")
def disk_setup():
    cs = build_cross_section("disk", 1.0, 0.1)
    sub = build_nested_subdomains(cs, (0.4, 0.3, 0.2, 0.1))
    grid = build_grid(cs, 4.0, 0.25, 1.0, 0.1)
    return cs, sub, grid


def test_japanese_bracket_values():
    assert japanese_bracket(0.0) == 1.0
    assert math.isclose(japanese_bracket(1.0), 1.4142135623, rel_tol=1e-10)
    assert math.isclose(japanese_bracket(3.0), 3.1622776601, rel_tol=1e-10)


@given(st.floats(-1e6, 1e6))
def test_japanese_bracket_even_and_at_least_one(s):
    assert japanese_bracket(s) >= 1.0
    assert japanese_bracket(s) == japanese_bracket(-s)


def test_sobolev_order_values():
    assert [sobolev_order(n) for n in (2, 3, 4, 7, 8)] == [1, 1, 2, 2, 3]


def test_weighted_norm_zero_and_axial_decay(disk_setup):
    _, _, grid = disk_setup
    assert weighted_sup_norm(np.zeros(grid.shape), grid, 1.0, 1.0) == 0.0
    q = np.broadcast_to(np.exp(-2 * japanese_bracket(grid.z)), grid.shape)
    oracle = max(math.exp(math.sqrt(1 + z * z)) * math.exp(-2 * math.sqrt(1 + z * z))
                 for z in grid.z.tolist())
    assert math.isclose(oracle, math.exp(-1), rel_tol=1e-15)
    assert math.isclose(weighted_sup_norm(q, grid, 1.0, 1.0), oracle, rel_tol=1e-14)


def test_weighted_norm_bump_at_origin(disk_setup):
    _, _, grid = disk_setup
    q = np.zeros(grid.shape)
    k = int(np.argmin(np.abs(grid.z)))
    q[10, 10, k] = 1.0
    assert math.isclose(weighted_sup_norm(q, grid, 1.0, 1.0), math.e, rel_tol=1e-14)


def test_weighted_norm_overflow_reported(disk_setup):
    _, _, grid = disk_setup
    with pytest.raises(OverflowError):
        weighted_sup_norm(np.ones(grid.shape), grid, 300.0, 1.0)


@settings(max_examples=30, deadline=None)
@given(st.floats(-5, 5), st.floats(0.1, 2.0), st.floats(0.0, 2.0), st.floats(0.5, 1.5))
def test_weighted_norm_properties(c, b1, extra, d):
    cs = build_cross_section("interval", 1.0, 0.25)
    grid = build_grid(cs, 3.0, 0.5, 1.0, 0.5)
    rng = np.random.default_rng(0)
    q = rng.standard_normal(grid.shape)
    n1 = weighted_sup_norm(q, grid, b1, d)
    assert math.isclose(weighted_sup_norm(c * q, grid, b1, d), abs(c) * n1, rel_tol=1e-12, abs_tol=1e-300)
    assert n1 >= np.abs(q).max()
    assert weighted_sup_norm(q, grid, b1 + extra, d) >= n1


def test_sobolev_surrogate_quadratic():
    cs = build_cross_section("interval", 1.0, 0.1)
    grid = build_grid(cs, 1.0, 0.1, 1.0, 0.5)
    x, _ = grid.coords()
    assert math.isclose(sobolev_surrogate(x**2, grid, 2), 2.0, rel_tol=1e-12)
    assert math.isclose(sobolev_surrogate(x**2, grid, 0), 1.0, rel_tol=1e-12)


def test_admissibility_verdicts(disk_setup):
    _, sub, grid = disk_setup
    p0 = np.full(grid.shape, 0.5)
    rep = check_admissible(p0, p0, sub, 1.0, 1.0, 1.0, 1, grid)
    assert rep.admissible and rep.decay_norm == 0.0
    p = p0.copy()
    idx = tuple(np.argwhere(sub.omega[0])[0]) + (5,)
    p[idx] += 1e-3
    rep = check_admissible(p, p0, sub, 1.0, 1.0, 1.0, 1, grid)
    assert not rep.admissible and not rep.support_ok
    assert idx in rep.violating_nodes


def test_gaussian_bump_decay_norm_matches_grid_max(disk_setup):
    cs, sub, grid = disk_setup
    X, Y, Z = grid.coords()
    A = 0.3
    q = A * np.exp(-(X**2 + Y**2) / 0.04) * np.exp(-Z**2)
    q[np.broadcast_to(sub.omega[0][..., None], grid.shape)] = 0.0
    oracle = 0.0
    for i, j, k in np.argwhere(grid.nodes):
        oracle = max(oracle, math.exp(math.sqrt(1 + grid.z[k] ** 2)) * abs(q[i, j, k]))
    rep = check_admissible(q, np.zeros(grid.shape), sub, 1.0, 1.0, 1.0, 1, grid)
    assert math.isclose(rep.decay_norm, oracle, rel_tol=1e-14)
    assert math.isclose(oracle, A * math.e, rel_tol=1e-12)


def test_make_test_pair(disk_setup):
    cs, sub, grid = disk_setup
    p1, p2 = make_test_pair(grid, sub, 0, 0.0, (0.0, 0.0), 0.4, 1.0, 1.0)
    assert not p1.any() and not p2.any()
    A, w = 0.2, 0.4
    p1, p2 = make_test_pair(grid, sub, 3, A, (0.1, 0.0), w, 1.0, 1.0)
    oracle = 0.0
    for i, j in np.argwhere(cs.nodes):
        x, y = cs.axes[0][i], cs.axes[1][j]
        r2 = ((x - 0.1) ** 2 + y**2) / w**2
        prof = math.exp(1 - 1 / (1 - r2)) if r2 < 1 else 0.0
        for z in grid.z:
            oracle += (A * prof * math.exp(-2 * math.sqrt(1 + z * z))) ** 2
    oracle = math.sqrt(oracle * grid.cell_volume)
    assert math.isclose(grid.l2_norm(p1 - p2, grid.nodes), oracle, rel_tol=1e-12)
    for p in (p1, p2):
        assert check_admissible(p, np.zeros(grid.shape), sub, 10.0, 1.0, 1.0, 1, grid).support_ok
    with pytest.raises(ValueError):
        make_test_pair(grid, sub, 0, A, (0.8, 0.0), 0.1, 1.0, 1.0)


def test_tail_bound(disk_setup):
    cs, sub, grid = disk_setup
    b, d, delta = 1.0, 1.0, 0.5
    p1, p2 = make_test_pair(grid, sub, 1, 0.2, (0.0, 0.0), 0.5, b, d)
    q = p2 - p1
    nrm = weighted_sup_norm(q, grid, b, d)
    s = np.linspace(-60, 60, 120001)
    l1 = float(np.trapezoid(np.exp(-delta * np.sqrt(1 + s * s) ** d), s))
    area = cs.node_count * cs.cell_volume
    C = nrm**2 * area * l1
    for y in (0.0, 0.5, 1.0, 2.0, 3.0):
        assert tail_l2_sq(q, grid, y) <= C * math.exp(-(2 * b - delta) * math.sqrt(1 + y * y) ** d)


def test_potential_field_rejects_complex():
    with pytest.raises(TypeError):
        PotentialField(np.zeros(3, complex), np.zeros(3), 1.0, 1.0, 1.0)


def test_smooth_bump_peak_and_support():
    pts = np.array([[0.0], [0.5], [1.0]])
    assert np.allclose(smooth_bump(pts, [0.0], 1.0), [1.0, math.exp(1 - 1 / 0.75), 0.0])
