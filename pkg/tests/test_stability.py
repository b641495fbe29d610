import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from waveguide_stability.carleman import eval_schrodinger_weights
from waveguide_stability.geometry import (
    build_cross_section,
    build_grid,
    build_nested_subdomains,
    build_strip,
)
from waveguide_stability.potentials import make_test_pair
from waveguide_stability.stability import (
    boundary_sq_norm,
    cutting_arithmetic,
    equation_residual,
    fit_delta5,
    linearize_and_symmetrize,
    lemma31_functional,
    lower_bound_mechanism,
    observability_functional,
    split_supremum,
    stability_bound,
    theorem1_sweep,
)

WIDTHS = (0.4, 0.3, 0.2, 0.1)


def disk_case(h=0.1, R=1.0, T=0.2, dt=0.005, amplitude=0.2):
    cs = build_cross_section("disk", 1.0, h)
    sub = build_nested_subdomains(cs, WIDTHS)
    g = build_grid(cs, R, h, T, dt)
    X, Y, Z = g.coords()
    u0 = np.where(g.unknowns, (1 - X**2 - Y**2) * np.cos(np.pi * Z / (2 * R)), 0.0)
    p1, p2 = make_test_pair(g, sub, 0, amplitude, (0.0, 0.0), 0.5, 1.0, 1.0)
    return cs, sub, g, u0, p1, p2


@pytest.fixture(scope="module")
def generic():
    cs, sub, g, u0, p1, p2 = disk_case()
    return cs, sub, g, u0, linearize_and_symmetrize(p1, p2, u0, g)


def test_identical_potentials_give_zero_pair():
    _, _, g, u0, p1, _ = disk_case(h=0.2, dt=0.02)
    pair = linearize_and_symmetrize(p1, p1, u0, g)
    assert not np.any(pair.u) and not np.any(pair.v)
    assert pair.antisymmetric()


def test_pair_invariants(generic):
    _, _, g, u0, pair = generic
    assert not np.any(pair.u[..., pair.zero_level])
    assert pair.antisymmetric()
    assert np.array_equal(pair.t, -pair.t[::-1])


def test_initial_slice_first_order():
    defects = []
    for dt in (0.01, 0.005):
        _, _, g, u0, p1, p2 = disk_case(h=0.2, dt=dt)
        pair = linearize_and_symmetrize(p1, p2, u0, g)
        defects.append(equation_residual(pair)["initial_defect"])
        scale = np.abs(pair.p * u0).max()
        assert defects[-1] <= 5 * dt * scale
    assert defects[0] / defects[1] >= 1.8


def _interval_pair(k):
    # discrete eigenvector data and polynomial bumps keep the refinement in its asymptotic range
    h, dt = 0.05 / k, 0.0005 / k
    cs = build_cross_section("interval", 1.0, h)
    g = build_grid(cs, 1.0, h, 0.05, dt)
    X, Z = g.coords()
    u0 = np.where(g.unknowns, np.sin(np.pi * X) * np.cos(np.pi * Z / 2), 0.0)
    s = (X - 0.5) / 0.4
    p2 = 0.2 * np.clip(1 - s**2, 0, None) ** 6 * (1 - Z**2) ** 6
    return linearize_and_symmetrize(np.zeros_like(p2), p2, u0, g)


def test_equation_residual_second_order():
    r = [equation_residual(_interval_pair(k))["residual"] for k in (2, 4)]
    assert 3.5 <= r[0] / r[1] <= 4.5


def test_equation_residual_trivial():
    _, _, g, u0, p1, _ = disk_case(h=0.2, dt=0.02)
    res = equation_residual(linearize_and_symmetrize(p1, p1, u0, g))
    assert res["residual"] == 0.0 and res["source_norm"] == 0.0


@pytest.fixture(scope="module")
def weights(generic):
    _, _, g, _, _ = generic
    return eval_schrodinger_weights(g, (2.0, 0.0), 2.0, 0.05)


def test_lemma31_zero_potential_difference(generic, weights):
    _, sub, g, u0, pair = generic
    pair = linearize_and_symmetrize(pair.p1, pair.p1, u0, g)
    rows = lemma31_functional(pair, weights, [1.0, 10.0], sub)
    assert all(r.lhs == 0.0 and math.isnan(r.ratio) for r in rows)


def test_lemma31_log_route_matches_direct_sum(generic, weights):
    _, sub, g, u0, pair = generic
    s = 0.3
    row = lemma31_functional(pair, weights, [s], sub)[0]
    # direct weighted sums with no shift, feasible at small s
    eta0 = weights.eta[..., len(weights.t) // 2]
    e0 = np.exp(-s * eta0)
    vol = g.cell_volume
    lhs = (np.abs(e0 * pair.p * u0) ** 2)[g.unknowns].sum() * vol
    v = pair.v[..., 1:-1]
    ring = (sub.ring[..., None] & g.unknowns)[..., None]
    e = np.exp(-s * weights.eta)
    src = (np.abs((e0 * pair.p)[..., None] * pair.du2[..., 1:-1]) ** 2 * g.unknowns[..., None]).sum()
    h = g.cross_section.spacing
    gx = np.zeros_like(v)
    gx[1:-1] = (v[2:] - v[:-2]) / (2 * h)
    gx[0], gx[-1] = v[1] / (2 * h), -v[-2] / (2 * h)
    gy = np.zeros_like(v)
    gy[:, 1:-1] = (v[:, 2:] - v[:, :-2]) / (2 * h)
    gy[:, 0], gy[:, -1] = v[:, 1] / (2 * h), -v[:, -2] / (2 * h)
    ringsum = sum((np.abs(e * f) ** 2 * ring).sum() for f in (v, gx, gy))
    rhs = s**-1.5 * (src + ringsum) * vol * pair.dt
    assert row.ratio == pytest.approx(lhs / rhs, rel=1e-10)


def test_lemma31_ratio_bounded_over_decade(generic, weights):
    _, sub, _, _, pair = generic
    rows = lemma31_functional(pair, weights, np.geomspace(1.0, 10.0, 5), sub)
    assert all(math.isfinite(r.ratio) and r.ratio >= 0 for r in rows)
    assert max(r.ratio for r in rows) <= rows[0].ratio


def test_lower_bound_mechanism_nodewise(generic, weights):
    _, _, g, u0, pair = generic
    # |u0| >= 0.64 * cos(pi y / 2) on the core where p lives
    y = 0.5
    kappa = 0.64 * math.cos(math.pi * y / 2)
    rep = lower_bound_mechanism(pair, kappa, 0.5, y, weights, 1.0)
    assert rep["checked"] > 0 and rep["violations"] == 0
    assert rep["weighted_lhs"] >= rep["weighted_rhs"]
    loud = lower_bound_mechanism(pair, 2.0, 0.5, y)
    assert loud["violations"] > 0


def test_cutting_examples():
    c = cutting_arithmetic(0.1, 1.0, 1.0, 0.5, 0.5)
    assert c.rho_delta == pytest.approx(0.22313016014842982, rel=1e-15)
    assert c.theta == pytest.approx(1 / 3, rel=1e-15)
    c = cutting_arithmetic(math.exp(-3.0), 1.0, 1.0, 0.5, 0.5)
    assert c.branch == "small" and c.y == pytest.approx(math.sqrt(15), rel=1e-12)
    edge = cutting_arithmetic(math.exp(-1.5), 1.0, 1.0, 0.5, 0.5)
    assert edge.branch == "large" and math.isnan(edge.y)
    for bad in (dict(delta=1.0), dict(delta=1.5), dict(delta=0.0)):
        with pytest.raises(ValueError):
            cutting_arithmetic(0.1, 1.0, 1.0, 0.5, **bad)
    with pytest.raises(ValueError):
        cutting_arithmetic(0.1, 1.0, 0.3, 0.5, 0.5)


@settings(max_examples=60, deadline=None)
@given(st.floats(0.05, 5.0), st.floats(0.01, 0.99), st.floats(0.3, 3.0), st.floats(0.01, 0.99))
def test_cut_height_defining_identity(b, frac, d, u):
    delta = frac * b
    c = cutting_arithmetic(0.5, b, d, 0.1 * d, delta)
    assert 0 < c.theta < 0.5
    rho = c.rho_delta * u
    cut = cutting_arithmetic(rho, b, d, 0.1 * d, delta)
    assert cut.branch == "small" and cut.y > 0
    assert cut.identity_defect <= 1e-10 * rho**2 + 1e-300


def test_stability_bound_edges():
    assert stability_bound(0.0, 0.4) == 0.0
    assert stability_bound(1.0, 0.4) == math.inf
    assert stability_bound(0.1, 0.4) == pytest.approx((0.1 + 1 / math.log(10)) ** 0.4)


@pytest.mark.parametrize("C,d0,d,delta", [(1.0, 0.5, 1.0, 0.5), (20.0, 0.5, 1.0, 0.5),
                                          (3.0, 1.2, 2.0, 0.1)])
def test_split_supremum_against_dense_grid(C, d0, d, delta):
    sup = split_supremum(C, d0, d, delta)
    a = 2 * d0 / 3
    lo = np.linspace(1e-9, 1.0, 200001)
    hi = np.linspace(1.0, 5.0 * max(sup["t_star"], 1.0), 400001)
    assert sup["sup_below_1"] == pytest.approx((C * lo**a - delta * lo**d).max(), abs=1e-8)
    assert sup["sup_above_1"] == pytest.approx((C * hi**a - delta * hi**d).max(), abs=1e-8)
    with pytest.raises(ValueError):
        split_supremum(C, d0, a, delta)


def test_observability_trivial(generic):
    cs, sub, g, u0, pair = generic
    strip = build_strip(cs, (0.0, math.pi / 2))
    same = linearize_and_symmetrize(pair.p1, pair.p1, u0, g)
    out = observability_functional(same, strip, sub, 0.0, 1.0)
    assert out["lhs"] == 0.0 and out["degenerate"]
    assert out["T1"] == pytest.approx(g.T / 6)
    live = observability_functional(pair, strip, sub, 0.05, 1.0, mu=0.5, N=1)
    assert live["exponent"] == 1.0 and not live["degenerate"]
    with pytest.raises(ValueError):
        observability_functional(pair, strip, sub, 0.05, 1.0, mu=1.0)


def test_observability_regimes(generic):
    cs, sub, g, u0, pair = generic
    strip = build_strip(cs, (0.0, math.pi / 2))
    B = boundary_sq_norm(pair, strip)
    gap, d5 = 0.01, 2.0
    log_side = observability_functional(pair, strip, sub, gap, d5, gamma0=1.0)
    gam = abs(math.log(gap)) / d5
    assert log_side["regime"] == "log" and log_side["gamma"] == pytest.approx(gam)
    assert log_side["rhs"] == pytest.approx(gam**-1 + math.exp(d5 * gam) * B, rel=1e-12)
    assert log_side["bound"] == pytest.approx(gap**2 + 1 / abs(math.log(gap)), rel=1e-12)
    direct = observability_functional(pair, strip, sub, 0.5, d5, gamma0=1.0)
    assert direct["regime"] == "direct" and direct["rhs"] == pytest.approx(0.5)


def test_fit_delta5_against_complex_route(generic):
    from waveguide_stability.fbi import fbi_at, make_cutoff
    from waveguide_stability.stability import _ring_fields

    cs, sub, g, u0, pair = generic
    strip = build_strip(cs, (0.0, math.pi / 2))
    T0 = 0.5
    fit = fit_delta5([pair], sub, strip, [2.0, 8.0], 1, T0)
    cutoff = make_cutoff(T0, g.T)
    eta = pair.t / cutoff.h
    inside = eta[np.abs(eta) < T0 / 2]
    fields = _ring_fields(pair, sub)
    wg = fbi_at(fields, pair.t, 8.0, 1, cutoff, inside.astype(complex))
    interior = (np.abs(wg) ** 2).sum() * g.cell_volume * (inside[1] - inside[0])
    row = fit["rows"][1]
    assert row["interior"] == pytest.approx(interior, rel=1e-9)
    assert row["boundary"] == pytest.approx(boundary_sq_norm(pair, strip) / cutoff.h)
    assert fit["delta5"] == max(0.0, max(r["exponent"] for r in fit["rows"]))
    for r in fit["rows"]:
        assert r["interior"] <= math.exp(fit["delta5"] * r["gamma"]) * r["boundary"] * (1 + 1e-12)


def _sweep(amplitudes, **kw):
    cs = build_cross_section("disk", 1.0, 0.2)
    sub = build_nested_subdomains(cs, WIDTHS)
    g = build_grid(cs, 1.0, 0.2, 0.2, 0.01)
    X, Y, Z = g.coords()
    u0 = np.where(g.unknowns, 12 * (1 - X**2 - Y**2) * np.cos(np.pi * Z / 2), 0.0)
    args = dict(eps=0.45, N=1, center=(0.0, 0.0), width=0.5, b=1.0, d=1.0, d0=0.5,
                delta=0.5, M=100.0)
    args.update(kw)
    return theorem1_sweep(g, sub, build_strip(cs, (0.0, math.pi / 2)), u0, amplitudes, **args)


def test_sweep_identical_pair_zero_columns():
    rep = _sweep([0.0])
    r = rep.records[0]
    assert r.l2_diff == 0.0 and r.gap == 0.0 and r.bound == 0.0
    assert r.branch == "degenerate"


def test_sweep_rejects_eps_at_edge():
    with pytest.raises(ValueError):
        _sweep([0.1], eps=0.5)


def test_sweep_skips_inadmissible_pairs():
    rep = _sweep([0.2, 0.01], M=0.05)
    assert [s[0] for s in rep.skipped] == [0]
    assert "not admissible" in rep.skipped[0][2]
    assert [r.pair_id for r in rep.records] == [1]


def test_sweep_geometric_family_monotone():
    rep = _sweep([0.2, 0.1, 0.05, 0.025], jobs=2)
    l2 = [r.l2_diff for r in rep.records]
    assert l2 == pytest.approx([l2[0] / 2**k for k in range(4)], rel=1e-12)
    assert rep.summary["l2_decreasing"] and rep.summary["bound_decreasing"]
    assert rep.summary["spearman"] > 0.9
    assert len(rep.rows()[0]) == 9
