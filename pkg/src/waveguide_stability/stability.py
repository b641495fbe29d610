"""Linearisation and time symmetrisation, the a-priori and observability functionals,
the cutting arithmetic and the amplitude sweep.

Trajectories on ``[0, T]`` are extended to ``[-T, T]`` by conjugation; with
real data and real potentials the backward Crank-Nicolson run equals the
conjugate of the forward one, so only forward solves are needed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special, stats

from .carleman import CarlemanRow, SchrodingerWeights, central_diff, dirichlet_laplacian
from .geometry import Grid, NestedSubdomains, ObservationStrip, japanese_bracket
from .solver import neumann_trace, solve_forward, trace_norm, WaveTrajectory

__all__ = [
    "LinearizedPair",
    "linearize_and_symmetrize",
    "equation_residual",
    "lemma31_functional",
    "lower_bound_mechanism",
    "CuttingResult",
    "cutting_arithmetic",
    "split_supremum",
    "fit_delta5",
    "observability_functional",
    "PairRecord",
    "StabilityReport",
    "theorem1_sweep",
    "stability_bound",
    "summarize",
    "boundary_sq_norm",
]


def _symmetric(u_pos: np.ndarray) -> np.ndarray:
    """Levels ``0..n`` extended to ``-n..n`` by ``u(-t) = conj u(t)``."""
    return np.concatenate([np.conj(u_pos[..., :0:-1]), u_pos], axis=-1)


def _antisymmetrise(f: np.ndarray) -> np.ndarray:
    """Overwrite negative levels with ``-conj`` of the positive ones (bitwise antisymmetry)."""
    n = f.shape[-1] // 2
    out = f.copy()
    out[..., :n] = -np.conj(f[..., :n:-1])
    return out


@dataclass(frozen=True, eq=False)
class LinearizedPair:
    """``u = u1 - u2``, ``v = d_t u`` and ``d_t u2`` on the symmetric levels ``-T..T``."""

    grid: Grid
    p1: np.ndarray
    p2: np.ndarray
    u0: np.ndarray
    t: np.ndarray
    u: np.ndarray
    v: np.ndarray
    du2: np.ndarray

    @property
    def p(self) -> np.ndarray:
        return self.p2 - self.p1

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0])

    @property
    def zero_level(self) -> int:
        return len(self.t) // 2

    def v_at_zero(self) -> np.ndarray:
        return self.v[..., self.zero_level]

    def antisymmetric(self) -> bool:
        """``v(-t) == -conj v(t)`` bitwise."""
        return bool(np.array_equal(self.v[..., ::-1], -np.conj(self.v)))


def linearize_and_symmetrize(p1, p2, u0, grid: Grid, trajectories=None) -> LinearizedPair:
    """Solve both forward problems and form ``u``, ``v = d_t u`` and ``d_t u2`` on ``[-T, T]``.

    Time derivatives are centred differences on the symmetric levels
    (second-order one-sided at ``t = +-T``).
    """
    p1 = np.asarray(p1, dtype=float)
    p2 = np.asarray(p2, dtype=float)
    u0 = np.asarray(u0, dtype=float)
    if trajectories is None:
        tr1 = solve_forward(p1, u0, grid)
        tr2 = tr1 if np.array_equal(p1, p2) else solve_forward(p2, u0, grid)
    else:
        tr1, tr2 = trajectories
    dt = grid.dt
    t = np.concatenate([-tr1.t[:0:-1], tr1.t])
    u1s, u2s = _symmetric(tr1.u), _symmetric(tr2.u)
    u = u1s - u2s
    v = _antisymmetrise(np.gradient(u, dt, axis=-1, edge_order=2))
    du2 = _antisymmetrise(np.gradient(u2s, dt, axis=-1, edge_order=2))
    return LinearizedPair(grid, p1, p2, u0, t, u, v, du2)


def equation_residual(pair: LinearizedPair) -> dict:
    """Discrete ``L^2(Q)`` norm of ``-i v_t - Laplace v + p1 v - p d_t u2`` on unknowns.

    The two end levels at each side are excluded (stencil reach of the
    nested differences).
    """
    g = pair.grid
    unk = g.unknowns[..., None]
    vt = central_diff(pair.v, pair.dt, pair.v.ndim - 1)
    res = (-1j * vt - dirichlet_laplacian(pair.v, g.spacings) + pair.p1[..., None] * pair.v
           - pair.p[..., None] * pair.du2)
    src = pair.p[..., None] * pair.du2
    sl = (Ellipsis, slice(2, -2))
    vol = g.cell_volume * pair.dt

    def nrm(f):
        return float(math.sqrt((np.abs(np.where(unk, f, 0.0)[sl]) ** 2).sum() * vol))

    r, s = nrm(res), nrm(src)
    init = pair.v_at_zero() - 1j * pair.p * pair.u0
    return {"residual": r, "source_norm": s, "relative": r / s if s > 0 else float("nan"),
            "initial_defect": float(np.abs(np.where(g.unknowns, init, 0.0)).max())}


def _sq(f: np.ndarray, mask: np.ndarray, vol: float) -> float:
    return float((np.abs(np.where(mask, f, 0.0)) ** 2).sum() * vol)


def _ring_mask(grid: Grid, subdomains: NestedSubdomains) -> np.ndarray:
    return (subdomains.ring[..., None] & grid.unknowns)[..., None]


def _exp_or_inf(x: float) -> float:
    return math.exp(x) if x < 709.0 else math.inf


def _log_sq(f: np.ndarray, eta: np.ndarray, s: float, mask: np.ndarray, vol: float) -> float:
    """``log sum |f|^2 e^{-2 s eta} vol`` over ``mask``; ``-inf`` for an empty integrand."""
    a = np.abs(np.broadcast_to(f, np.broadcast_shapes(f.shape, mask.shape))) ** 2
    m = np.broadcast_to(mask, a.shape) & (a > 0)
    if not m.any():
        return -math.inf
    e = np.broadcast_to(eta, a.shape)[m]
    return float(special.logsumexp(np.log(a[m]) - 2 * s * e) + math.log(vol))


def lemma31_functional(pair: LinearizedPair, weights: SchrodingerWeights, s_values,
                       subdomains: NestedSubdomains) -> list:
    """Rows ``(s, LHS, RHS, LHS/RHS)`` of the weighted a-priori estimate for ``v``.

    ``LHS = ||e^{-s eta(.,0)} p u0||^2`` over the cylinder and ``RHS =
    s^{-3/2}`` times the weighted source norm over ``Q`` plus the weighted
    ``v`` and tangential-gradient norms over the ring.  Sums are taken in log
    space; both sides carry the factor ``exp(2 s eta_p)`` removed, with
    ``eta_p`` the smallest ``eta(.,0)`` on the support of ``p``, and the
    ratio is formed from the logarithms.
    """
    g = pair.grid
    if weights.grid is not g:
        raise ValueError("weights and pair live on different grids")
    if len(weights.t) != len(pair.t) - 2:
        raise ValueError("weight times must be the interior levels of the pair")
    p = pair.p
    if not np.any(p):
        return [CarlemanRow(float(s), 0.0, 0.0, float("nan"), False) for s in s_values]
    eta = weights.eta                          # lattice + (1, nt - 2)
    eta0 = eta[..., len(weights.t) // 2]
    unk = g.unknowns
    shift = float(np.min(np.broadcast_to(eta0, g.shape)[unk & (p != 0)]))
    sl = (Ellipsis, slice(1, -1))
    v, du2 = pair.v[sl], pair.du2[sl]
    h = g.cross_section.spacing
    grad_v = [central_diff(v, h, ax) for ax in range(g.cross_section.dim)]
    ring = _ring_mask(g, subdomains)
    vol = g.cell_volume
    volt = vol * pair.dt
    e0 = eta0 - shift
    et = eta - shift
    pu0 = p * pair.u0
    src_field = p[..., None] * du2
    rows = []
    for s in s_values:
        s = float(s)
        log_lhs = _log_sq(pu0, e0, s, unk, vol)
        terms = [_log_sq(src_field, e0[..., None], s, unk[..., None], volt),
                 _log_sq(v, et, s, ring, volt)]
        terms += [_log_sq(gv, et, s, ring, volt) for gv in grad_v]
        log_rhs = -1.5 * math.log(s) + float(special.logsumexp(terms))
        lhs, rhs = _exp_or_inf(log_lhs), _exp_or_inf(log_rhs)
        flagged = log_rhs == -math.inf and log_lhs > -math.inf
        ratio = math.inf if flagged else math.exp(log_lhs - log_rhs)
        rows.append(CarlemanRow(s, lhs, rhs, ratio, flagged))
    return rows


def lower_bound_mechanism(pair: LinearizedPair, kappa: float, d0: float, y: float,
                          weights: SchrodingerWeights = None, s: float = 0.0) -> dict:
    """Node-wise check of ``|p u0|^2 >= kappa^2 <y>^{-d0} |p|^2`` on ``omega x (-y, y)``.

    Also compares the weighted norms built from both sides; with
    ``weights=None`` the weight is identically one.
    """
    g = pair.grid
    band = g.unknowns & (np.abs(g.z) < y)
    floor = kappa**2 * float(japanese_bracket(y)) ** (-d0)
    pa = np.abs(pair.p) ** 2
    lhs_node = pa * np.abs(pair.u0) ** 2
    rhs_node = floor * pa
    active = band & (pa > 0)
    margin = np.where(active, lhs_node - rhs_node, np.inf)
    if weights is None:
        w = np.ones(g.shape)
    else:
        eta0 = weights.eta[..., len(weights.t) // 2]
        shift = float(np.min(np.where(g.cross_section.nodes, eta0[..., 0], np.inf)))
        w = np.broadcast_to(np.exp(-2 * s * (eta0 - shift)), g.shape)
    vol = g.cell_volume
    return {
        "floor": floor,
        "checked": int(active.sum()),
        "violations": int((margin < 0).sum()),
        "min_margin": float(margin.min()) if active.any() else float("nan"),
        "weighted_lhs": float((w * lhs_node)[band].sum() * vol),
        "weighted_rhs": float((w * rhs_node)[band].sum() * vol),
    }


@dataclass(frozen=True)
class CuttingResult:
    rho: float
    rho_delta: float
    theta: float
    y: float              # nan on the large branch
    branch: str
    identity_defect: float  # |rho^2 - exp(-(2b - delta)<y>^d)|, nan on the large branch


def cutting_arithmetic(rho: float, b: float, d: float, d0: float, delta: float) -> CuttingResult:
    """Branch selection, cut height ``y(rho)`` and exponent ``theta`` for the tail-splitting step."""
    if not 0 < delta < b:
        raise ValueError(f"requires 0 < delta < b, got delta = {delta}, b = {b}")
    if not d > 2 * d0 / 3:
        raise ValueError(f"requires d > 2 d0 / 3, got d = {d}, d0 = {d0}")
    if not rho > 0:
        raise ValueError(f"rho must be positive, got {rho}")
    c = 2 * b - delta
    rho_delta = math.exp(-c)
    theta = (b - delta) / c
    if rho >= rho_delta:
        return CuttingResult(rho, rho_delta, theta, float("nan"), "large", float("nan"))
    ratio = 2 * math.log(rho) / math.log(rho_delta)
    y = math.sqrt(ratio ** (2 / d) - 1)
    defect = abs(rho**2 - math.exp(-c * float(japanese_bracket(y)) ** d))
    return CuttingResult(rho, rho_delta, theta, y, "small", defect)


def split_supremum(C: float, d0: float, d: float, delta: float) -> dict:
    """Suprema of ``C t^a - delta t^d`` (``a = 2 d0 / 3``) over ``(0, 1)`` and ``(1, inf)``.

    The exponent has a single critical point ``t*``; both suprema are finite
    when ``d > a``.  Exponents are returned, not their exponentials.
    """
    a = 2 * d0 / 3
    if not d > a:
        raise ValueError("requires d > 2 d0 / 3 for a finite supremum")
    if not (C > 0 and delta > 0):
        raise ValueError("C and delta must be positive")
    t_star = (C * a / (delta * d)) ** (1 / (d - a))

    def f(t):
        return C * t**a - delta * t**d

    return {"a": a, "t_star": t_star, "sup_below_1": f(min(t_star, 1.0)),
            "sup_above_1": f(max(t_star, 1.0))}


def _ring_fields(pair: LinearizedPair, subdomains: NestedSubdomains) -> np.ndarray:
    """``v`` and its tangential gradient on ring unknowns, shaped ``(1 + dim, nodes, levels)``."""
    g = pair.grid
    h = g.cross_section.spacing
    sel = subdomains.ring[..., None] & g.unknowns
    fields = [pair.v] + [central_diff(pair.v, h, ax) for ax in range(g.cross_section.dim)]
    return np.stack([f[sel] for f in fields])


def _interior_energy(fields: np.ndarray, times: np.ndarray, window: float, vol: float) -> float:
    inside = np.abs(times) < window * (1 + 1e-12)
    dt = float(times[1] - times[0])
    return float((np.abs(fields[..., inside]) ** 2).sum() * vol * dt)


def boundary_sq_norm(pair: LinearizedPair, strip: ObservationStrip) -> float:
    """``||d_nu v||^2`` in ``L^2`` over the strip and ``(-T, T)`` (trapezoid in time)."""
    traj = WaveTrajectory(pair.grid, pair.v, pair.t, pair.dt, 1, 0.0)
    tr = neumann_trace(traj, strip)
    dens = (np.abs(tr.values) ** 2 * (tr.weights[:, None, None] * tr.dz)).sum(axis=(0, 1))
    return float(np.trapezoid(dens, pair.t))


def fit_delta5(pairs, subdomains: NestedSubdomains, strip: ObservationStrip, gammas, m: int,
               T0: float) -> dict:
    """Smallest ``delta5 >= 0`` with ``N(gamma) <= e^{delta5 gamma} B`` over all pairs and ``gamma``.

    ``N(gamma)`` is the transformed interior energy (``w_gamma`` and its
    tangential gradient on the ring, ``|eta| < T0 / 2``) and ``B`` the boundary
    energy of the rescaled source over ``(-3 T0, 3 T0)``, i.e. ``||d_nu v||^2 / h``.
    Pairs with vanishing boundary energy are skipped.
    """
    from .fbi import make_cutoff, transform_on_window

    rows = []
    for k, pair in enumerate(pairs):
        cutoff = make_cutoff(T0, pair.grid.T)
        B = boundary_sq_norm(pair, strip) / cutoff.h
        if not B > 0:
            continue
        fields = _ring_fields(pair, subdomains)
        vol = pair.grid.cell_volume
        for gam in gammas:
            eta, wg = transform_on_window(fields, pair.t, float(gam), m, cutoff)
            d_eta = float(eta[1] - eta[0]) if eta.size > 1 else pair.dt / cutoff.h
            interior = float((np.abs(wg) ** 2).sum() * vol * d_eta)
            rows.append({"pair": k, "gamma": float(gam), "interior": interior, "boundary": B,
                         "exponent": math.log(interior / B) / float(gam) if interior > 0 else -math.inf})
    if not rows:
        raise ValueError("no pair with a nonzero boundary observation")
    return {"delta5": max(0.0, max(r["exponent"] for r in rows)), "rows": rows}


def observability_functional(pair: LinearizedPair, strip: ObservationStrip,
                             subdomains: NestedSubdomains, gap: float, delta5: float, *,
                             mu: float = 0.5, N: int = 1, gamma0: float = 1.0,
                             window: float = None) -> dict:
    """Interior energy of ``v`` on the ring over ``(-T1, T1)`` against the boundary-side bounds.

    ``window`` defaults to ``T1 = T / 6``.  In the logarithmic regime
    (``gap <= exp(-delta5 gamma0)``) the right-hand side is
    ``gamma^{-2 mu N} + e^{delta5 gamma} ||d_nu v||^2`` at
    ``gamma = |log gap| / delta5``; otherwise it is ``gap^{2 mu N}``.
    ``bound`` is ``(gap^2 + |log gap|^{-1})^{2 mu N}``.
    """
    if not 0 < mu < 1:
        raise ValueError("mu must lie in (0, 1)")
    g = pair.grid
    T1 = g.T / 6 if window is None else float(window)
    lhs = _interior_energy(_ring_fields(pair, subdomains), pair.t, T1, g.cell_volume)
    out = {"lhs": lhs, "T1": T1, "gap": gap, "delta5": delta5, "exponent": 2 * mu * N}
    if gap == 0:
        out.update(degenerate=True, regime="degenerate", gamma=float("nan"), rhs=float("nan"),
                   bound=0.0, ratio=float("nan"), ratio_bound=float("nan"))
        return out
    e = 2 * mu * N
    B = boundary_sq_norm(pair, strip)
    if gap <= math.exp(-delta5 * gamma0):
        gamma = abs(math.log(gap)) / delta5 if delta5 > 0 else math.inf
        growth = 1.0 if delta5 == 0 else math.exp(delta5 * gamma)
        rhs = gamma ** -e + growth * B
        regime = "log"
    else:
        gamma = float("nan")
        rhs = gap**e
        regime = "direct"
    bound = (gap**2 + 1 / abs(math.log(gap))) ** e if gap != 1 else math.inf
    out.update(degenerate=False, regime=regime, gamma=gamma, boundary=B, rhs=rhs, bound=bound,
               ratio=lhs / rhs if rhs > 0 else math.inf,
               ratio_bound=lhs / bound if bound > 0 else math.inf)
    return out


@dataclass
class PairRecord:
    pair_id: int
    amplitude: float
    l2_diff: float
    gap: float
    bound: float
    ratio: float
    rho: float
    branch: str
    y: float
    theta: float
    observability: dict = None


@dataclass
class StabilityReport:
    eps: float
    records: list
    skipped: list                 # (pair_id, amplitude, reason)
    summary: dict = field(default_factory=dict)

    COLUMNS = ("pair_id", "amplitude", "l2_diff", "gap", "bound", "ratio", "branch", "y", "theta")

    def rows(self) -> list:
        return [tuple(getattr(r, c) for c in self.COLUMNS) for r in self.records]


def stability_bound(gap: float, eps: float) -> float:
    """``(gap + |log gap|^{-1})^eps``; zero for a zero gap."""
    if gap == 0:
        return 0.0
    if gap == 1:
        return math.inf
    return (gap + 1 / abs(math.log(gap))) ** eps


def _strictly_decreasing(x) -> bool:
    return bool(len(x) >= 2 and np.all(np.diff(x) < 0))


def summarize(records, eps: float) -> dict:
    amp = [r.amplitude for r in records]
    order = np.argsort(amp)[::-1]
    l2 = np.array([records[i].l2_diff for i in order])
    bd = np.array([records[i].bound for i in order])
    ratios = np.array([r.ratio for r in records if math.isfinite(r.ratio) and r.ratio > 0])
    live = (l2 > 0) & np.isfinite(bd)
    rho_s = float(stats.spearmanr(l2[live], bd[live]).statistic) if live.sum() >= 3 else float("nan")
    return {
        "eps": eps,
        "spearman": rho_s,
        "l2_decreasing": _strictly_decreasing(l2),
        "bound_decreasing": _strictly_decreasing(bd),
        "ratio_spread": float(ratios.max() / ratios.min()) if len(ratios) >= 2 else float("nan"),
        "ratio_max": float(ratios.max()) if len(ratios) else float("nan"),
    }


def theorem1_sweep(grid: Grid, subdomains: NestedSubdomains, strip: ObservationStrip, u0,
                   amplitudes, *, eps: float, N: int, center, width: float, b: float, d: float,
                   d0: float, delta: float, M: float, p0=None, seed: int = 0,
                   observability: dict = None, jobs: int = 1) -> StabilityReport:
    """Amplitude sweep of potential pairs: coefficient gap, data gap and the stability bound.

    ``observability`` (keys ``gammas``, ``m``, ``T0`` and optionally ``mu``,
    ``gamma0``) adds the interior-energy check with one ``delta5`` fitted
    jointly over the family.
    """
    from concurrent.futures import ThreadPoolExecutor

    from .potentials import check_admissible, make_test_pair

    if not 0 < eps < N / 2:
        raise ValueError(f"requires 0 < eps < N/2 = {N / 2}, got {eps}")
    p0 = np.zeros(grid.shape) if p0 is None else np.asarray(p0, dtype=float)
    u0 = np.asarray(u0, dtype=float)
    skipped, jobs_in = [], []
    for k, A in enumerate(amplitudes):
        p1, p2 = make_test_pair(grid, subdomains, seed, float(A), center, width, b, d, p0)
        bad = [name for name, p in (("p1", p1), ("p2", p2))
               if not check_admissible(p, p0, subdomains, M, b, d, N, grid).admissible]
        if bad:
            skipped.append((k, float(A), f"{' and '.join(bad)} not admissible for M = {M}"))
        else:
            jobs_in.append((k, float(A), p1, p2))

    def run(job):
        k, A, p1, p2 = job
        t1 = solve_forward(p1, u0, grid)
        t2 = t1 if np.array_equal(p1, p2) else solve_forward(p2, u0, grid)
        pair = linearize_and_symmetrize(p1, p2, u0, grid, (t1, t2))
        diff = WaveTrajectory(grid, t1.u - t2.u, t1.t, t1.dt, t1.stride, 0.0)
        gap = neumann_trace(diff, strip).norm if A != 0 else 0.0
        return k, A, pair, gap

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            done = list(ex.map(run, jobs_in))
    else:
        done = [run(j) for j in jobs_in]

    delta5 = None
    if observability is not None and done:
        live = [pair for _, A, pair, gap in done if gap > 0]
        delta5 = fit_delta5(live, subdomains, strip, observability["gammas"], observability["m"],
                            observability["T0"])["delta5"] if live else 0.0

    records = []
    vol = grid.cell_volume
    for k, A, pair, gap in done:
        l2 = grid.l2_norm(pair.p)
        bound = stability_bound(gap, eps)
        rho2 = _interior_energy(_ring_fields(pair, subdomains), pair.t, grid.T, vol)
        rho = math.sqrt(rho2)
        if rho > 0:
            cut = cutting_arithmetic(rho, b, d, d0, delta)
            branch, y, theta = cut.branch, cut.y, cut.theta
        else:
            branch, y, theta = "degenerate", float("nan"), (b - delta) / (2 * b - delta)
        obs = None
        if delta5 is not None:
            obs = observability_functional(pair, strip, subdomains, gap, delta5,
                                           mu=observability.get("mu", 0.5), N=N,
                                           gamma0=observability.get("gamma0", 1.0))
        ratio = l2 / bound if bound > 0 else float("nan")
        records.append(PairRecord(k, A, l2, gap, bound, ratio, rho, branch, y, theta, obs))
    summary = summarize(records, eps)
    summary["delta5"] = delta5
    if delta5 is not None:
        rb = [r.observability["ratio_bound"] for r in records if not r.observability["degenerate"]]
        summary["observability_ratio_max"] = max(rb) if rb else float("nan")
    return StabilityReport(eps, records, skipped, summary)
