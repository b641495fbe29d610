"""Schrodinger-side weights, the conjugated operator pair and the Carleman ratio checker.

Space-time fields have shape ``lattice + (nz, nt)`` with times symmetric
about zero and strictly inside ``(-T, T)``.  Weight fields do not depend on
the axial coordinate and are stored with a length-one axial axis.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .geometry import Grid, NestedSubdomains

__all__ = [
    "SchrodingerWeights",
    "symmetric_times",
    "eval_schrodinger_weights",
    "default_lambda_grid",
    "central_diff",
    "dirichlet_laplacian",
    "apply_conjugated_pair",
    "CarlemanRow",
    "carleman_ratio_schrodinger",
    "empirical_threshold",
    "decade_spread",
]

EXP_LIMIT = 700.0


def symmetric_times(grid: Grid) -> np.ndarray:
    """Interior levels ``j dt`` with ``|t| <= T - dt``."""
    m = grid.nt - 2
    return grid.dt * np.arange(-m, m + 1, dtype=float)


def central_diff(f: np.ndarray, h: float, axis: int) -> np.ndarray:
    """Centred first difference; values beyond the array ends are taken as zero."""
    g = np.moveaxis(f, axis, 0)
    out = np.zeros_like(g)
    out[1:-1] = g[2:] - g[:-2]
    out[0] = g[1]
    out[-1] = -g[-2]
    return np.moveaxis(out, 0, axis) / (2 * h)


def dirichlet_laplacian(f: np.ndarray, spacings) -> np.ndarray:
    """Second differences over the leading ``len(spacings)`` axes with zero exterior."""
    out = np.zeros_like(f)
    for ax, h in enumerate(spacings):
        g = np.moveaxis(f, ax, 0)
        d2 = -2.0 * g
        d2[1:] += g[:-1]
        d2[:-1] += g[1:]
        out += np.moveaxis(d2, 0, ax) / (h * h)
    return out


def default_lambda_grid(K: float, cap: float = 40.0) -> list:
    """``{1, 2, 4, 8}`` rescaled so that ``lambda K <= cap``."""
    base = [1.0, 2.0, 4.0, 8.0]
    scale = min(1.0, cap / (8.0 * K))
    return [b * scale for b in base]


@dataclass(frozen=True, eq=False)
class SchrodingerWeights:
    grid: Grid
    x0: np.ndarray
    r: float
    lam: float
    K: float
    T: float
    t: np.ndarray
    beta_tilde: np.ndarray
    beta: np.ndarray
    phi: np.ndarray        # lattice + (1, nt)
    eta: np.ndarray
    eta_t: np.ndarray
    grad_eta: tuple        # cross-section components
    lap_eta: np.ndarray
    invariants: dict

    @property
    def grad_eta_sq(self) -> np.ndarray:
        return sum(g * g for g in self.grad_eta)


def _closure_nodes(cs) -> np.ndarray:
    if cs.shape != "disk":
        return cs.nodes
    r = np.hypot(*cs.coords())
    return cs.nodes & (r <= cs.params["radius"] * (1 + 1e-12))


def eval_schrodinger_weights(grid: Grid, x0prime, r: float, lam: float) -> SchrodingerWeights:
    cs = grid.cross_section
    x0 = np.asarray(x0prime, dtype=float).reshape(cs.dim)
    if cs.contains_closure(x0):
        raise ValueError(f"anchor {x0.tolist()} lies in the closed cross-section")
    if not r > 1:
        raise ValueError("r must exceed 1")
    if not lam > 0:
        raise ValueError("lambda must be positive")
    K = r * cs.sup_sq_distance(x0)
    if 2 * lam * K > EXP_LIMIT:
        raise OverflowError(
            f"exp(2 lambda K) overflows; need lambda <= {EXP_LIMIT / (2 * K):.4g} for K = {K:.4g}")
    T = grid.T
    t = symmetric_times(grid)
    ell = (T + t) * (T - t)
    X = cs.coords()
    bt = sum((x - c) ** 2 for x, c in zip(X, x0))
    beta = bt + K
    eb = np.exp(lam * beta)[..., None, None]
    top = math.exp(2 * lam * K)
    inv_ell = 1.0 / ell
    phi = eb * inv_ell
    eta = (top - eb) * inv_ell
    eta_t = (top - eb) * (2 * t / ell**2)
    grad_beta = [2 * (x - c) for x, c in zip(X, x0)]
    grad_eta = tuple(-lam * g[..., None, None] * phi for g in grad_beta)
    gb2 = sum(g * g for g in grad_beta)
    lap_eta = -(lam**2 * gb2 + lam * 2 * cs.dim)[..., None, None] * phi

    # staircase boundary nodes of the disk sit up to h/2 outside the closure, where eta may dip below 0
    nodes = _closure_nodes(cs)[..., None, None]
    eta_nodes = np.where(nodes, eta, np.inf)
    k0 = len(t) // 2
    t_last = t[-1]
    growth = T**2 / (T**2 - t_last**2)
    invariants = {
        "eta_nonnegative": bool((np.where(nodes, eta, 0.0) >= 0).all()),
        "eta_min_at_t0": bool((eta_nodes >= eta_nodes[..., k0:k0 + 1]).all()),
        "eta0_bound": bool(np.where(nodes[..., 0], eta[..., k0], 0.0).max() <= top / T**2),
        "phi_positive": bool((phi > 0).all()),
        "phi_endpoint_growth": bool(np.allclose(phi[..., -1] / phi[..., k0], growth, rtol=1e-12)),
    }
    return SchrodingerWeights(grid, x0, float(r), float(lam), K, T, t, bt, beta, phi, eta,
                              eta_t, grad_eta, lap_eta, invariants)


def _time_spacing(weights: SchrodingerWeights) -> float:
    return float(weights.t[1] - weights.t[0])


def _m1(z, weights, s):
    g = weights.grid
    dt = _time_spacing(weights)
    return (1j * central_diff(z, dt, z.ndim - 1) + dirichlet_laplacian(z, g.spacings)
            + s * s * weights.grad_eta_sq * z)


def _m2(z, weights, s):
    g = weights.grid
    h = g.cross_section.spacing
    drift = sum(ge * central_diff(z, h, ax) for ax, ge in enumerate(weights.grad_eta))
    return 1j * s * weights.eta_t * z + 2 * s * drift + s * weights.lap_eta * z


def apply_principal(w: np.ndarray, weights: SchrodingerWeights) -> np.ndarray:
    """``L w = -i w_t - Laplace w`` on the space-time lattice."""
    dt = _time_spacing(weights)
    return -1j * central_diff(w, dt, w.ndim - 1) - dirichlet_laplacian(w, weights.grid.spacings)


def apply_conjugated_pair(w: np.ndarray, weights: SchrodingerWeights, s: float):
    """Return ``(M1 w, M2 w, residual)`` with ``residual = (M1 + M2) w + e^{-s eta} L(e^{s eta} w)``."""
    w = np.asarray(w, dtype=complex)
    if not np.any(w):
        z = np.zeros_like(w)
        return z, z.copy(), z.copy()
    supp = np.abs(w) > 0
    expo = float(np.max(np.where(supp, s * weights.eta, -np.inf)))
    if expo > EXP_LIMIT:
        raise OverflowError(
            f"e^(s eta) overflows on the support of w (s max eta = {expo:.1f}); "
            f"lower lambda below {weights.lam * EXP_LIMIT / expo:.4g} or shrink the support in time")
    m1 = _m1(w, weights, s)
    m2 = _m2(w, weights, s)
    e = np.exp(s * weights.eta)
    res = m1 + m2 + apply_principal(e * w, weights) / e
    return m1, m2, res


@dataclass(frozen=True)
class CarlemanRow:
    s: float
    lhs: float
    rhs: float
    ratio: float
    flagged: bool


def _sq_norm(f, mask, vol):
    return float((np.abs(f) ** 2 * mask).sum() * vol)


def carleman_ratio_schrodinger(w, weights: SchrodingerWeights, s_values,
                               subdomains: NestedSubdomains, p=None) -> list:
    """Rows of ``(s, LHS, RHS, LHS/RHS)`` for the weighted estimate on ``Q_2``.

    ``w`` is an array on the space-time lattice or a callable ``s -> array``.
    LHS and RHS are reported with the common factor ``exp(2 s min eta)`` over
    the stencil reach of ``w`` removed, which keeps them representable.
    """
    g = weights.grid
    cs = g.cross_section
    h = cs.spacing
    vol = g.cell_volume * _time_spacing(weights)
    q2 = subdomains.core(2)[..., None, None].astype(float)
    ring = subdomains.ring[..., None, None].astype(float)
    allq = cs.nodes[..., None, None].astype(float)
    rows = []
    for s in s_values:
        ws = np.asarray(w(s) if callable(w) else w, dtype=complex)
        if not np.any(ws):
            rows.append(CarlemanRow(float(s), 0.0, 0.0, float("nan"), False))
            continue
        # both sides are quadratic in the weight: a constant shift of eta cancels in the ratio
        reach = ndimage.binary_dilation(np.abs(ws) > 0, iterations=2)
        shift = float(np.min(np.where(reach, weights.eta, np.inf)))
        damp = np.exp(-s * (weights.eta - shift))
        z = damp * ws
        grad_w = [central_diff(ws, h, ax) for ax in range(cs.dim)]
        pw = apply_principal(ws, weights)
        if p is not None:
            pw = pw + p[..., None] * ws
        lhs = (s * sum(_sq_norm(damp * gw, q2, vol) for gw in grad_w)
               + s**3 * _sq_norm(z, q2, vol)
               + _sq_norm(_m1(z, weights, s), q2, vol)
               + _sq_norm(_m2(z, weights, s), q2, vol))
        rhs = (_sq_norm(damp * pw, allq, vol)
               + sum(_sq_norm(damp * gw, ring, vol) for gw in grad_w)
               + _sq_norm(z, ring, vol))
        flagged = rhs == 0.0 and lhs > 0.0
        ratio = float("inf") if flagged else lhs / rhs
        rows.append(CarlemanRow(float(s), lhs, rhs, ratio, flagged))
    return rows


def decade_spread(rows, s_lo: float) -> float:
    """``max/min`` of the finite ratios with ``s`` in ``[s_lo, 10 s_lo]``."""
    vals = [r.ratio for r in rows
            if s_lo * (1 - 1e-12) <= r.s <= 10 * s_lo * (1 + 1e-12) and math.isfinite(r.ratio)]
    if len(vals) < 2:
        return float("nan")
    return max(vals) / min(vals)


def empirical_threshold(rows, spread: float = 2.0):
    """Smallest ``s`` whose following decade has ratio spread below ``spread``; ``None`` if none."""
    for r in rows:
        if r.s * 10 > rows[-1].s * (1 + 1e-12):
            break
        sp = decade_spread(rows, r.s)
        if math.isfinite(sp) and sp < spread:
            return r.s
    return None
