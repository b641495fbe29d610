import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from waveguide_stability.geometry import (
    build_cross_section,
    build_grid,
    build_nested_subdomains,
    build_strip,
)


def test_interval_nodes_and_normals():
    cs = build_cross_section("interval", 1.0, 0.1)
    assert cs.node_count == 11
    assert cs.normals[:, 0].tolist() == [-1.0, 1.0]


def test_rectangle_counts_match_enumeration():
    cs = build_cross_section("rectangle", (1.0, 1.0), 0.25)
    pts = list(itertools.product(range(5), repeat=2))
    on_edge = [p for p in pts if 0 in p or 4 in p]
    assert cs.node_count == len(pts) == 25
    assert int(cs.boundary.sum()) == len(on_edge) == 16


@pytest.mark.parametrize("h", [0.1, 1 / 12, 0.05])
def test_disk_normals_radial(h):
    cs = build_cross_section("disk", 1.0, h)
    pts = cs.boundary_points()
    radial = pts / np.linalg.norm(pts, axis=1, keepdims=True)
    assert np.abs(cs.normals - radial).max() < 1e-10
    assert np.abs(np.linalg.norm(cs.normals, axis=1) - 1).max() < 1e-12
    k = np.flatnonzero(np.all(np.isclose(pts, [1.0, 0.0]), axis=1))
    assert len(k) == 1 and np.allclose(cs.normals[k[0]], [1.0, 0.0], atol=1e-10)
    r = np.linalg.norm(pts, axis=1)
    assert np.all(np.abs(r - 1.0) <= h / 2 + 1e-12)
    X, Y = cs.coords()
    assert np.all(np.hypot(X, Y)[cs.interior] < 1.0)


@pytest.mark.parametrize("shape,params", [("interval", 0.0), ("disk", -1.0), ("rectangle", (1.0, 0.0))])
def test_degenerate_shapes_rejected(shape, params):
    with pytest.raises(ValueError):
        build_cross_section(shape, params, 0.1)


def test_nonpositive_spacing_rejected():
    with pytest.raises(ValueError):
        build_cross_section("interval", 1.0, 0.0)


def test_disk_collars_are_annuli():
    cs = build_cross_section("disk", 1.0, 0.05)
    sub = build_nested_subdomains(cs, (0.4, 0.3, 0.2, 0.1))
    X, Y = cs.coords()
    r = np.hypot(X, Y)
    for w, om in zip(sub.widths, sub.omega):
        assert np.array_equal(om, cs.nodes & (r > 1 - w + 1e-9))
    rs = r[sub.s_sharp]
    assert np.all(np.abs(rs - 0.6) <= cs.spacing + 1e-12)
    for j in range(1, 4):
        assert not (sub.omega[j] & ~sub.omega[j - 1]).any()
        assert sub.omega[j].sum() < sub.omega[j - 1].sum()
    # Omega_2 is inside Omega_3
    assert not (sub.core(2) & ~sub.core(3)).any()


def test_interval_inner_collar_is_two_end_segments():
    cs = build_cross_section("interval", 1.0, 0.01)
    sub = build_nested_subdomains(cs, (0.2, 0.15, 0.1, 0.05))
    x = cs.axes[0][sub.omega[3]]
    expected = [i / 100 for i in range(101) if min(i, 100 - i) < 5]
    assert np.allclose(x, expected)
    assert x[x < 0.5].max() < 0.05 and x[x > 0.5].min() > 0.95


def test_equal_widths_rejected():
    cs = build_cross_section("disk", 1.0, 0.05)
    with pytest.raises(ValueError):
        build_nested_subdomains(cs, (0.4, 0.3, 0.3, 0.1))
    with pytest.raises(ValueError):
        build_nested_subdomains(cs, (1.2, 0.3, 0.2, 0.1))


def test_grid_counts():
    cs = build_cross_section("interval", 1.0, 0.1)
    g = build_grid(cs, 5.0, 0.5, 1.0, 0.01)
    assert (cs.node_count, g.nz, g.nt) == (11, 21, 101)
    assert g.node_count == 11 * 21
    flat = g.unknown_index[g.unknowns]
    assert np.array_equal(np.sort(flat), np.arange(g.n_unknowns))


def test_grid_rejections():
    cs = build_cross_section("disk", 1.0, 0.1)
    with pytest.raises(ValueError):
        build_grid(cs, 5.0, 0.5, 1.0, 0.0)
    with pytest.raises(ValueError, match="MiB"):
        build_grid(cs, 5.0, 0.01, 1.0, 1e-4, memory_cap=1e6)
    with pytest.raises(ValueError):
        build_grid(cs, 2.0, 0.5, 1.0, 0.1, decay=(1.0, 1.0))


def test_grid_decay_check_accepts_long_cylinder():
    assert math.exp(-math.sqrt(65.0)) < 1e-3
    cs = build_cross_section("disk", 1.0, 0.25)
    g = build_grid(cs, 8.0, 0.5, 1.0, 0.1, decay=(1.0, 1.0), truncation_tolerance=1e-3)
    assert g.R == 8.0


def test_disk_strip_arc_weights_sum_to_circumference():
    cs = build_cross_section("disk", 1.0, 0.05)
    full = build_strip(cs)
    assert full.covers_boundary
    assert math.isclose(full.weights.sum(), 2 * math.pi, rel_tol=1e-12)
    half = build_strip(cs, (0.0, math.pi))
    assert 0.4 * 2 * math.pi < half.weights.sum() < 0.6 * 2 * math.pi
    assert np.all(half.points[:, 1] > 0)


def test_strip_too_small_rejected():
    cs = build_cross_section("disk", 1.0, 0.1)
    with pytest.raises(ValueError):
        build_strip(cs, (0.0, 0.05))


def test_rectangle_and_interval_strips():
    cs = build_cross_section("rectangle", (1.0, 1.0), 0.1)
    s = build_strip(cs, ("bottom", (0.2, 0.8)))
    assert np.allclose(s.points[:, 1], 0.0) and len(s.members) == 5
    assert math.isclose(build_strip(cs).weights.sum(), 4.0)
    ci = build_cross_section("interval", 1.0, 0.1)
    assert len(build_strip(ci, "left").members) == 1


@settings(max_examples=25, deadline=None)
@given(st.floats(0.5, 2.0), st.integers(8, 20))
def test_disk_boundary_within_half_spacing(radius, k):
    h = radius / k
    cs = build_cross_section("disk", radius, h)
    r = np.linalg.norm(cs.boundary_points(), axis=1)
    assert np.all(np.abs(r - radius) <= h / 2 + 1e-12)
    assert np.allclose(np.linalg.norm(cs.normals, axis=1), 1.0, atol=1e-12)
