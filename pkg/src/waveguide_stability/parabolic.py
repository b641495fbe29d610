"""Parabolic-side weights: the boundary function psi0, the weights phi0 and alpha,
the pointwise weight bounds, the conjugated pair L1/L2 and the Carleman ratio checker.

Points are passed as tuples of coordinate arrays, one per cross-section axis.
Space-time fields on a :class:`ParabolicBox` have shape ``lattice + (nz, ntau)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import ndimage
from scipy.special import erf

from .carleman import EXP_LIMIT, CarlemanRow, central_diff, dirichlet_laplacian
from .geometry import NestedSubdomains, ObservationStrip
from .potentials import smooth_bump

__all__ = [
    "Psi0",
    "Psi0Error",
    "construct_psi0",
    "verify_psi0",
    "ParabolicWeights",
    "WeightTable",
    "eval_parabolic_weights",
    "select_epsilon",
    "lemma_a1_scan",
    "ParabolicBox",
    "box_from_subdomains",
    "conjugated_pair_parabolic",
    "energy_identity_check",
    "ParabolicRow",
    "apply_heat_operator",
    "carleman_ratio_parabolic",
    "quasimode",
]

FD_STEP = 2e-3
BILAP_STEP = 1e-2


class Psi0Error(ValueError):
    """A candidate psi0 violates one of its four defining conditions."""

    def __init__(self, message: str, violations: dict):
        super().__init__(message)
        self.violations = violations


def _fd_grad(func, X, h=FD_STEP):
    out = []
    for d in range(len(X)):
        def shifted(k, d=d):
            Y = list(X)
            Y[d] = X[d] + k * h
            return func(tuple(Y))
        out.append((-shifted(2) + 8 * shifted(1) - 8 * shifted(-1) + shifted(-2)) / (12 * h))
    return out


def _fd_laplacian(func, X, h):
    out = -2.0 * len(X) * func(X)
    for d in range(len(X)):
        for k in (-1, 1):
            Y = list(X)
            Y[d] = X[d] + k * h
            out = out + func(tuple(Y))
    return out / (h * h)


@dataclass(frozen=True, eq=False)
class Psi0:
    """Boundary function on the outer collar ``omega_0``.

    ``value`` is always available; closed-form derivatives are used when given,
    otherwise fourth-order central differences of ``value``.
    """

    kind: str
    subdomains: NestedSubdomains
    strip: ObservationStrip
    value: Callable
    sup: float
    grad_fn: Callable | None = None
    hess_fn: Callable | None = None
    bilap_ratio_fn: Callable | None = None
    report: dict = field(default_factory=dict)

    @property
    def analytic(self) -> bool:
        return self.grad_fn is not None

    def __call__(self, X):
        return self.value(tuple(np.asarray(x, dtype=float) for x in X))

    def grad(self, X) -> list:
        X = tuple(np.asarray(x, dtype=float) for x in X)
        if self.grad_fn is not None:
            return self.grad_fn(X)
        return _fd_grad(self.value, X)

    def hessian(self, X) -> list:
        X = tuple(np.asarray(x, dtype=float) for x in X)
        if self.hess_fn is not None:
            return self.hess_fn(X)
        dim = len(X)
        rows = []
        for i in range(dim):
            gi = lambda Y, i=i: self.grad(Y)[i]
            rows.append(_fd_grad(gi, X))
        return [[0.5 * (rows[i][j] + rows[j][i]) for j in range(dim)] for i in range(dim)]

    def laplacian(self, X):
        H = self.hessian(X)
        return sum(H[i][i] for i in range(len(H)))

    def bilaplacian_ratio(self, X, lam: float):
        """``exp(-lam psi0) Laplace^2 exp(lam psi0)``, finite for any ``lam``."""
        X = tuple(np.asarray(x, dtype=float) for x in X)
        if self.bilap_ratio_fn is not None:
            return self.bilap_ratio_fn(X, lam)
        base = self.value(X)
        E = lambda Y: np.exp(lam * (self.value(Y) - base))
        lapE = lambda Y: _fd_laplacian(E, Y, BILAP_STEP)
        return _fd_laplacian(lapE, X, BILAP_STEP)


def _wrap(u):
    return (u + np.pi) % (2 * np.pi) - np.pi


def _glue(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = np.exp(-1.0 / x[pos])
    return out


def _smooth_step_down(t):
    """1 for ``t <= 0``, 0 for ``t >= 1``, smooth in between."""
    t = np.clip(t, -1.0, 2.0)
    a, b = _glue(1.0 - t), _glue(t)
    return a / (a + b)


def _strip_arc(strip: ObservationStrip):
    """Centre angle and half-width of the strip's member arc on the disk."""
    pts = strip.points
    theta = np.arctan2(pts[:, 1], pts[:, 0])
    c = math.atan2(np.sin(theta).sum(), np.cos(theta).sum())
    return c, float(np.abs(_wrap(theta - c)).max())


def _disk_explicit(subdomains, strip):
    R = subdomains.cross_section.params["radius"]
    r0 = R - subdomains.widths[0]

    def value(X):
        return X[0] ** 2 + X[1] ** 2 - r0 * r0

    def grad(X):
        return [2 * X[0], 2 * X[1]]

    def hess(X):
        two = np.full(np.broadcast(*X).shape, 2.0)
        zero = np.zeros_like(two)
        return [[two, zero], [zero, two]]

    def bilap_ratio(X, lam):
        r2 = X[0] ** 2 + X[1] ** 2
        return (4 * lam + 4 * lam**2 * r2) ** 2 + 32 * lam**3 * r2 + 16 * lam**2

    return Psi0("disk-explicit", subdomains, strip, value, R * R - r0 * r0, grad, hess, bilap_ratio)


def _disk_polar(subdomains, strip):
    """Smooth polar construction for a proper arc ``S_*``.

    Radial profile ``s g - a s^2`` with ``s = r - r0``: zero on the inner circle,
    outward slope positive over the arc and negative away from it.  The
    angular factor ``2 + sin(Theta(u))`` keeps the angular derivative nonzero
    wherever the radial one vanishes.
    """
    R = subdomains.cross_section.params["radius"]
    W = subdomains.widths[0]
    r0 = R - W
    c, half = _strip_arc(strip)
    phib = 0.9 * half
    # monotone angle map with Theta(+-u_ext) = +-pi/2, steep only near the arc centre
    u_ext = phib / 4
    width = u_ext / 2 * math.sqrt(2)
    e1, e2 = math.erf(u_ext / width), math.erf(math.pi / width)
    amp = (math.pi - 2 * u_ext) / (2 * e1 - e2)

    def value(X):
        r = np.hypot(X[0], X[1])
        u = _wrap(np.arctan2(X[1], X[0]) - c)
        big_theta = math.pi * (u + amp * erf(u / width)) / (math.pi + amp * e2)
        G = 2 + np.sin(big_theta)
        B = _smooth_step_down((np.abs(u) - phib / 2) / (phib / 2))
        y = W * (0.8 + 0.6 * B)
        s = r - r0
        return s * G / y - G * s * s / (2 * y * y)

    # G <= 3 and s/y(1 - s/2y) <= 1/2 bound the supremum
    rr, tt = np.meshgrid(np.linspace(r0, R, 81), np.linspace(-np.pi, np.pi, 1441), indexing="ij")
    sup = float(value((rr * np.cos(tt), rr * np.sin(tt))).max())
    return Psi0("disk-polar", subdomains, strip, value, sup)


def _interval_both(subdomains, strip):
    L = subdomains.cross_section.params["length"]
    w0 = subdomains.widths[0]

    def value(X):
        x = X[0]
        return w0 - np.minimum(x, L - x)

    def grad(X):
        return [np.where(X[0] < L / 2, -1.0, 1.0)]

    def hess(X):
        return [[np.zeros_like(X[0])]]

    def bilap_ratio(X, lam):
        return np.full(np.shape(X[0]), lam**4)

    return Psi0("interval", subdomains, strip, value, w0, grad, hess, bilap_ratio)


def _closure_samples(subdomains, strip, n_radial=41, n_angular=720):
    """Dense samples of closure(omega_0), of ``S_sharp`` and of ``boundary(omega_0) minus S_*``.

    Each curve sample carries the outward unit normal of ``omega_0``.
    """
    cs = subdomains.cross_section
    w0 = subdomains.widths[0]
    if cs.shape == "interval":
        L = cs.params["length"]
        xs = np.concatenate([np.linspace(0, w0, n_radial), np.linspace(L - w0, L, n_radial)])
        sharp = (np.array([w0, L - w0]),)
        sharp_n = [np.array([1.0, -1.0])]
        outer = [p for p, keep in ((0.0, strip.members.tolist().count(0) == 0),
                                   (L, strip.members.tolist().count(1) == 0)) if keep]
        outer_n = [-1.0 if p == 0.0 else 1.0 for p in outer]
        free = (np.concatenate([sharp[0], outer]),)
        free_n = [np.concatenate([sharp_n[0], outer_n])]
        return (xs,), sharp, free, free_n
    if cs.shape != "disk":
        raise NotImplementedError(f"psi0 sampling for {cs.shape!r} cross-sections")
    R = cs.params["radius"]
    r0 = R - w0
    th = np.linspace(-np.pi, np.pi, n_angular, endpoint=False)
    rr, tt = np.meshgrid(np.linspace(r0, R, n_radial), th, indexing="ij")
    closure = (rr * np.cos(tt), rr * np.sin(tt))
    sharp = (r0 * np.cos(th), r0 * np.sin(th))
    fx, fy, nx, ny = [sharp[0]], [sharp[1]], [-np.cos(th)], [-np.sin(th)]
    if not strip.covers_boundary:
        c, half = _strip_arc(strip)
        off = th[np.abs(_wrap(th - c)) >= half]
        fx.append(R * np.cos(off))
        fy.append(R * np.sin(off))
        nx.append(np.cos(off))
        ny.append(np.sin(off))
    free = (np.concatenate(fx), np.concatenate(fy))
    return closure, sharp, free, [np.concatenate(nx), np.concatenate(ny)]


def verify_psi0(psi: Psi0, subdomains=None, strip=None, tol: float = 1e-9) -> dict:
    """Check the four defining conditions of ``psi0``.

    Positivity and a nonvanishing gradient are checked on the ``omega_0`` nodes
    and on dense samples of the closed collar; the zero trace on ``S_sharp`` and
    the sign of the outward derivative on the free boundary on dense curve
    samples.  Returns ``{condition: violating points}`` (empty arrays when met).
    """
    sub = subdomains or psi.subdomains
    strip = strip or psi.strip
    cs = sub.cross_section
    X = tuple(x[sub.omega[0]] for x in cs.coords())
    closure, sharp, free, free_n = _closure_samples(sub, strip)
    dist = cs.distance_to_boundary(np.stack([c.ravel() for c in closure], axis=-1))
    inner = dist < sub.widths[0] - 1e-12
    closure_open = tuple(c.ravel()[inner] for c in closure)
    scale = max(psi.sup, 1.0)

    def pts(Y, bad):
        return np.stack([y[bad] for y in Y], axis=-1)

    out = {}
    for name, Y in (("positive_nodes", X), ("positive_collar", closure_open)):
        v = psi(Y)
        out[name] = pts(Y, ~(v > 0))
    for name, Y in (("gradient_nodes", X), ("gradient_closure", tuple(c.ravel() for c in closure))):
        g = np.sqrt(sum(gi**2 for gi in psi.grad(Y)))
        out[name] = pts(Y, ~(g > tol * scale))
    out["zero_on_sharp"] = pts(sharp, ~(np.abs(psi(sharp)) <= tol * scale))
    dn = sum(gi * ni for gi, ni in zip(psi.grad(free), free_n))
    out["normal_derivative"] = pts(free, ~(dn <= tol * scale))
    return out


def construct_psi0(subdomains: NestedSubdomains, strip: ObservationStrip) -> Psi0:
    """Build and verify ``psi0`` for the collar ``omega_0`` and the strip ``S_*``.

    Disk with the whole circle observed: ``|x'|^2 - r0^2``.  Disk with a proper
    arc: the smooth polar construction.  Interval observed at both ends:
    ``w0 - dist``.  The interval observed at one end has no admissible ``psi0``
    (the free end forces an interior critical point).
    """
    cs = subdomains.cross_section
    if strip.cross_section is not cs:
        raise ValueError("strip and subdomains live on different cross-sections")
    if cs.shape == "disk":
        psi = _disk_explicit(subdomains, strip) if strip.covers_boundary else _disk_polar(subdomains, strip)
    elif cs.shape == "interval":
        if not strip.covers_boundary:
            raise ValueError("no admissible psi0 when only one end of the interval is observed: "
                             "psi0 must rise from the inner collar edge and fall at the free end")
        psi = _interval_both(subdomains, strip)
    else:
        raise NotImplementedError("psi0 construction is available for the disk and the interval only")
    bad = verify_psi0(psi)
    counts = {k: len(v) for k, v in bad.items()}
    if any(counts.values()):
        raise Psi0Error(f"psi0 ({psi.kind}) fails its conditions: {counts}", bad)
    psi.report.update(counts)
    return psi


@dataclass(frozen=True, eq=False)
class WeightTable:
    """``phi0``, ``alpha`` and the derivatives used by the conjugated pair, shaped ``points + (1, ntau)``."""

    phi0: np.ndarray
    alpha: np.ndarray
    grad_alpha: tuple
    lap_alpha: np.ndarray
    alpha_tau: np.ndarray

    @property
    def grad_alpha_sq(self) -> np.ndarray:
        return sum(g * g for g in self.grad_alpha)


@dataclass(frozen=True, eq=False)
class ParabolicWeights:
    psi0: Psi0
    lam: float
    a_w: float
    b_w: float
    tau: np.ndarray
    beta0: float
    omega_sharp: np.ndarray   # cross-section node mask
    mu1: float
    invariants: dict

    @property
    def top(self) -> float:
        """``exp(lam (sup psi0 + b_w))``, the constant in the numerator of ``alpha``."""
        return math.exp(self.lam * (self.psi0.sup + self.b_w))

    def ell(self, tau):
        tau = np.asarray(tau, dtype=float)
        return (1 - tau) * (1 + tau)

    def table(self, X, tau=None) -> WeightTable:
        tau = self.tau if tau is None else np.asarray(tau, dtype=float)
        psi = self.psi0
        lam = self.lam
        E = np.exp(lam * (psi(X) + self.a_w))[..., None, None]
        ell = self.ell(tau)
        phi0 = E / ell
        alpha = (E - self.top) / ell
        g = psi.grad(X)
        grad = tuple(lam * gi[..., None, None] * phi0 for gi in g)
        gsq = sum(gi * gi for gi in g)
        lap = lam * (lam * gsq + psi.laplacian(X))[..., None, None] * phi0
        alpha_tau = (E - self.top) * (2 * tau / ell**2)
        return WeightTable(phi0, alpha, grad, lap, alpha_tau)

    def alpha_at(self, X, tau):
        E = np.exp(self.lam * (self.psi0(X) + self.a_w))
        return (E - self.top) / self.ell(tau)


def eval_parabolic_weights(psi0: Psi0, lam: float, a_w=None, b_w=None, tau_grid=None,
                           d_tau: float = 0.01) -> ParabolicWeights:
    """Tabulate the parabolic weights and check their invariants on ``omega_0`` nodes.

    Defaults ``a_w = 1.2 sup psi0`` and ``b_w = 1.3 sup psi0``.  The default
    ``tau`` grid is ``|tau| <= 1 - d_tau`` at step ``d_tau``.
    """
    sup = psi0.sup
    a_w = 1.2 * sup if a_w is None else float(a_w)
    b_w = 1.3 * sup if b_w is None else float(b_w)
    if not sup < a_w < b_w < 2 * a_w - sup:
        raise ValueError(f"parameter chain sup psi0 < a_w < b_w < 2 a_w - sup psi0 violated: "
                         f"sup={sup:.6g}, a_w={a_w:.6g}, b_w={b_w:.6g}, 2a_w-sup={2 * a_w - sup:.6g}")
    if not lam > 0:
        raise ValueError("lambda must be positive")
    if lam * (sup + b_w) > EXP_LIMIT:
        raise OverflowError(f"exp(lambda (sup psi0 + b_w)) overflows; need lambda <= "
                            f"{EXP_LIMIT / (sup + b_w):.4g}")
    if tau_grid is None:
        m = int(round(1 / d_tau)) - 1
        tau_grid = d_tau * np.arange(-m, m + 1)
    tau = np.asarray(tau_grid, dtype=float)
    if np.any(np.abs(tau) >= 1):
        raise ValueError("tau grid must lie strictly inside (-1, 1)")

    sub = psi0.subdomains
    cs = sub.cross_section
    Xn = cs.coords()
    psi_nodes = np.where(sub.omega[0], psi0(Xn), np.nan)
    beta0 = float(np.nanmin(np.where(sub.ring, psi_nodes, np.nan))) / 2
    omega_sharp = sub.omega[0] & ~sub.omega[1] & (psi_nodes <= beta0)
    top = math.exp(lam * (sup + b_w))
    mu1 = top - math.exp(lam * (beta0 + a_w))
    w = ParabolicWeights(psi0, float(lam), a_w, b_w, tau, beta0, omega_sharp, mu1, {})
    Xc = tuple(x[sub.omega[0]][:, None] for x in Xn)
    alpha = w.alpha_at(Xc, tau[None, :])
    phi0 = np.exp(lam * (psi0(Xc) + a_w)) / w.ell(tau)[None, :]
    sharp_rows = omega_sharp[sub.omega[0]]
    k0 = int(np.argmin(np.abs(tau)))
    w.invariants.update({
        "alpha_negative": bool((alpha < 0).all()),
        "alpha_below_minus_mu1_on_sharp": bool(mu1 > 0 and (alpha[sharp_rows] <= -mu1).all()),
        "phi0_positive": bool((phi0 > 0).all()),
        "endpoint_growth": bool((np.abs(alpha[:, -1]) > np.abs(alpha[:, k0])).all()
                                and (phi0[:, -1] > phi0[:, k0]).all()),
        "sharp_region_nonempty": bool(omega_sharp.any()),
    })
    return w


def select_epsilon(weights: ParabolicWeights, candidates=None) -> dict:
    """Smallest ``eps`` with ``(top - exp(lam (2 beta0 + a_w))) / ell(eps) < mu1``.

    The left side bounds ``-alpha`` on ``ring x (-eps, eps)`` because
    ``psi0 >= 2 beta0`` on the ring; the empirical ``-min alpha`` there is
    returned alongside.  ``eps`` is ``None`` when no candidate qualifies.
    """
    if candidates is None:
        candidates = [k / 10 for k in range(1, 10)]
    lam, a = weights.lam, weights.a_w
    top = weights.top
    sub = weights.psi0.subdomains
    Xr = tuple(x[sub.ring][:, None] for x in sub.cross_section.coords())
    for eps in sorted(candidates):
        bound = (top - math.exp(lam * (2 * weights.beta0 + a))) / float(weights.ell(eps))
        if bound < weights.mu1:
            tau = weights.tau[np.abs(weights.tau) < eps]
            mu2 = float(-weights.alpha_at(Xr, tau[None, :]).min())
            return {"eps": eps, "mu2_bound": bound, "mu2": mu2, "mu1": weights.mu1,
                    "mu2_within_bound": mu2 <= bound * (1 + 1e-12)}
    return {"eps": None, "mu2_bound": float("nan"), "mu2": float("nan"), "mu1": weights.mu1,
            "mu2_within_bound": False}


def _a1_ratios(psi: Psi0, X, lam: float, a: float, b: float, tau):
    """Scale-free ratios of the seven pointwise weight bounds, shaped ``points x tau``.

    Exponentials enter only through ``exp(lam (psi0 + a))`` powers and
    ``top - E``, both evaluated in log form so large ``lam`` stays finite.
    """
    g = [gi[..., None] for gi in psi.grad(X)]
    H = [[hij[..., None] for hij in row] for row in psi.hessian(X)]
    dim = len(g)
    gsq = sum(gi * gi for gi in g)
    hgg = sum(H[i][j] * g[i] * g[j] for i in range(dim) for j in range(dim))
    lap = sum(H[i][i] for i in range(dim))
    logE = lam * (psi(X) + a)[..., None]
    logtop = lam * (psi.sup + b)
    # log(top - E) without forming either exponential
    loggap = logtop + np.log(-np.expm1(np.minimum(logE - logtop, -1e-300)))
    bilap = np.abs(psi.bilaplacian_ratio(X, lam))[..., None]
    ell = (1 - tau) * (1 + tau)
    at = np.abs(tau)

    def gap_over_E(k):
        return np.exp(loggap - k * logE)
    # smallest eigenvalue of lam grad psi grad psi^T + D^2 psi
    M = np.empty(np.broadcast(*X).shape + (dim, dim))
    for i in range(dim):
        for j in range(dim):
            M[..., i, j] = lam * g[i][..., 0] * g[j][..., 0] + H[i][j][..., 0]
    min_eig = np.linalg.eigvalsh(M)[..., 0][..., None]
    ones = np.ones_like(ell)
    return {
        "A1": (gsq * gsq + hgg / lam) * ones,
        "A2": np.abs(lam * gsq + lap) / lam * np.exp(-logE) * ell,
        "A2b": bilap * ell**2 / lam**4 * np.exp(-2 * logE),
        "A3": 2 * at * gap_over_E(2) * np.abs(lam * gsq + lap) / lam,
        "A4": gap_over_E(3) * (2 * ell + 8 * tau**2),
        "A5": 2 * at * gsq * np.exp(-logE),
        "A6": min_eig * ones,
    }


def lemma_a1_scan(weights: ParabolicWeights, lambda_values=None, windows=(0.9, 0.99),
                  n_tau: int = 199) -> dict:
    """Empirical constants of the pointwise weight bounds on ``omega_0`` nodes.

    ``A1`` and ``A6`` report minima (lower bounds), the others maxima, each per
    ``|tau|`` window.  ``lambda0`` is the smallest scanned value from which
    the ``A1`` constant stays positive.
    """
    if lambda_values is None:
        lambda_values = [1.0, 2.0, 4.0, 8.0]
    psi = weights.psi0
    sub = psi.subdomains
    X = tuple(x[sub.omega[0]] for x in sub.cross_section.coords())
    rows = []
    for lam in lambda_values:
        row = {"lambda": float(lam), "excluded_nodes": 0}
        for win in windows:
            tau = np.linspace(-win, win, n_tau)
            r = _a1_ratios(psi, X, lam, weights.a_w, weights.b_w, tau)
            for key, val in r.items():
                agg = val.min() if key in ("A1", "A6") else val.max()
                row[f"{key}@{win:g}"] = float(agg)
        rows.append(row)
    first = f"A1@{windows[0]:g}"
    lam0 = None
    for i in range(len(rows)):
        if all(r[first] > 0 for r in rows[i:]):
            lam0 = rows[i]["lambda"]
            break
    return {"rows": rows, "lambda0": lam0, "windows": tuple(windows)}


@dataclass(frozen=True, eq=False)
class ParabolicBox:
    """Uniform lattice over ``x' x z x tau`` carrying parabolic-side fields.

    ``cross_section`` is set when the ``x'`` axes are the cross-section
    lattice itself (so ``omega_0`` masks and strip traces apply); patch
    lattices leave it ``None``.
    """

    axes: tuple
    z: np.ndarray
    tau: np.ndarray
    cross_section: object = None

    @property
    def shape(self) -> tuple:
        return tuple(len(a) for a in self.axes) + (len(self.z), len(self.tau))

    @property
    def spacings(self) -> tuple:
        return tuple(float(a[1] - a[0]) for a in self.axes) + (float(self.z[1] - self.z[0]),)

    @property
    def d_tau(self) -> float:
        return float(self.tau[1] - self.tau[0])

    @property
    def volume(self) -> float:
        return float(np.prod(self.spacings)) * self.d_tau

    def coords(self) -> tuple:
        return tuple(np.meshgrid(*self.axes, indexing="ij"))

    def mask(self, subdomains=None) -> np.ndarray:
        """``omega_0`` nodes as a broadcastable space-time mask (all nodes on a patch)."""
        dim = len(self.axes)
        if subdomains is None:
            return np.ones(self.shape[:dim] + (1, 1), dtype=float)
        return subdomains.omega[0][..., None, None].astype(float)


def box_from_subdomains(subdomains: NestedSubdomains, z, tau) -> ParabolicBox:
    cs = subdomains.cross_section
    return ParabolicBox(tuple(cs.axes), np.asarray(z, float), np.asarray(tau, float), cs)


def apply_heat_operator(w, box: ParabolicBox, h: float, p1=None) -> np.ndarray:
    """``h^-1 d_tau w - Laplace w (+ p1 w)`` with zero exterior values."""
    out = central_diff(w, box.d_tau, w.ndim - 1) / h - dirichlet_laplacian(w, box.spacings)
    if p1 is not None:
        out = out + np.asarray(p1)[..., None] * w
    return out


def conjugated_pair_parabolic(z, table: WeightTable, box: ParabolicBox, sigma: float, h: float):
    """``(L1 z, L2 z)``: transport part and the remaining second-order part."""
    drift = sum(ga * central_diff(z, box.spacings[d], d) for d, ga in enumerate(table.grad_alpha))
    l1 = central_diff(z, box.d_tau, z.ndim - 1) / h + 2 * sigma * drift
    l2 = (-dirichlet_laplacian(z, box.spacings)
          - sigma * (table.alpha_tau / h + sigma * table.grad_alpha_sq) * z)
    return l1, l2


def _ip(a, b, vol):
    return complex(np.vdot(b, a) * vol)


def energy_identity_check(w, weights: ParabolicWeights, sigma: float, h: float,
                          box: ParabolicBox) -> dict:
    """Residuals of the conjugation identity and of its squared expansion.

    ``residual1 = ||L1 z + L2 z - g||`` with ``z = e^{sigma alpha} w`` and
    ``g = e^{sigma alpha} (h^-1 d_tau - Laplace) w - sigma (Laplace alpha) z``.
    ``residual2`` compares ``||L1 z||^2 + ||L2 z||^2 + 2 Re <L1 z, L2 z>`` with
    ``||L1 z + L2 z||^2`` (relative), ``residual2_g`` with ``||g||^2``.
    """
    if not 0 < h < 1:
        raise ValueError("h must lie in (0, 1)")
    w = np.asarray(w, dtype=complex)
    window = float(np.abs(box.tau).max())
    if not np.any(w):
        return {"residual1": 0.0, "residual1_rel": 0.0, "residual2": 0.0, "residual2_g": 0.0,
                "tau_window": window}
    table = weights.table(box.coords(), box.tau)
    expo = sigma * table.alpha
    if expo.max() > EXP_LIMIT:
        raise OverflowError("e^(sigma alpha) overflows on the box")
    e = np.exp(expo)
    z = e * w
    vol = box.volume
    f = e * apply_heat_operator(w, box, h)
    g = f - sigma * table.lap_alpha * z
    l1, l2 = conjugated_pair_parabolic(z, table, box, sigma, h)
    s12 = l1 + l2
    r1 = math.sqrt(max(_ip(s12 - g, s12 - g, vol).real, 0.0))
    gn = _ip(g, g, vol).real
    expand = _ip(l1, l1, vol).real + _ip(l2, l2, vol).real + 2 * _ip(l1, l2, vol).real
    sn = _ip(s12, s12, vol).real
    return {
        "residual1": r1,
        "residual1_rel": r1 / math.sqrt(gn) if gn > 0 else 0.0,
        "residual2": abs(expand - sn) / sn if sn > 0 else 0.0,
        "residual2_g": abs(expand - gn) / gn if gn > 0 else 0.0,
        "tau_window": window,
    }


@dataclass(frozen=True)
class ParabolicRow(CarlemanRow):
    boundary: float = 0.0   # part of rhs carried by the strip trace


def _strip_trace(w, box: ParabolicBox, strip: ObservationStrip) -> np.ndarray:
    """Second-order one-sided outward normal derivative at the strip nodes."""
    from .solver import _interp_matrix

    cs = box.cross_section
    hx = cs.spacing
    pts, nrm = strip.points, strip.normals
    P1 = _interp_matrix(cs, pts - hx * nrm)
    P2 = _interp_matrix(cs, pts - 2 * hx * nrm)
    W = w.reshape(int(np.prod(cs.lattice_shape)), -1)
    wb = W[np.ravel_multi_index(tuple(strip.index.T), cs.lattice_shape)]
    vals = (3 * wb - 4 * (P1 @ W) + P2 @ W) / (2 * hx)
    return vals.reshape((len(pts),) + w.shape[cs.dim:])


def carleman_ratio_parabolic(w, weights: ParabolicWeights, sigma_values, h: float,
                             strip: ObservationStrip = None, box: ParabolicBox = None,
                             p1=None) -> list:
    """Rows of ``(sigma, LHS, RHS, LHS/RHS)`` for the weighted parabolic estimate.

    ``w`` is an array on ``box`` or a callable ``sigma -> (box, array)``.  On a
    cross-section box the norms run over ``omega_0`` and the boundary term over
    ``strip``; on a patch box the field must vanish near the patch edges and
    the boundary term is zero.  Both sides are reported with the common factor
    ``exp(2 sigma max alpha)`` over the stencil reach of ``w`` removed.
    """
    if not 0 < h < 1:
        raise ValueError("h must lie in (0, 1)")
    sub = weights.psi0.subdomains
    rows = []
    for sigma in sigma_values:
        if callable(w):
            bx, ws = w(sigma)
        else:
            bx, ws = box, w
        ws = np.asarray(ws, dtype=complex)
        if not np.any(ws):
            rows.append(ParabolicRow(float(sigma), 0.0, 0.0, float("nan"), False))
            continue
        on_cs = bx.cross_section is not None
        mask = bx.mask(sub if on_cs else None)
        table = weights.table(bx.coords(), bx.tau)
        reach = ndimage.binary_dilation(np.abs(ws) > 0, iterations=2)
        ref = float(np.max(np.where(reach, table.alpha, -np.inf)))
        damp = np.exp(sigma * (table.alpha - ref))
        vol = bx.volume
        dim = len(bx.axes)
        grads = [central_diff(ws, bx.spacings[d], d) for d in range(dim)]
        lw = apply_heat_operator(ws, bx, h, p1)
        sq = lambda f: float((np.abs(f) ** 2 * mask).sum() * vol)
        lhs = sigma * sum(sq(damp * g) for g in grads) + sigma**3 * sq(damp * ws)
        rhs = float((np.abs(damp * lw) ** 2).sum() * vol)
        boundary = 0.0
        if strip is not None and on_cs:
            tr = _strip_trace(ws, bx, strip)
            bt = weights.table(tuple(strip.points.T), bx.tau)
            dens = bt.phi0 * np.exp(2 * sigma * (bt.alpha - ref)) * np.abs(tr) ** 2
            boundary = sigma * float((dens * strip.weights[:, None, None]).sum()
                                     * bx.spacings[-1] * bx.d_tau)
            rhs += boundary
        flagged = rhs == 0.0 and lhs > 0.0
        lhs, rhs = float(lhs), float(rhs)
        rows.append(ParabolicRow(float(sigma), lhs, rhs, float("inf") if flagged else lhs / rhs,
                                 flagged, boundary))
    return rows


def quasimode(weights: ParabolicWeights, center, sigma: float, kappa: float = 0.1,
              q: float = 0.5, tau_nodes: int = 10):
    """Localized test field for the parabolic estimate at scale ``sigma``.

    Envelope: smooth bumps of radius ``kappa / sqrt(sigma)`` in every ``x'``
    axis, in ``z`` and in ``tau``, centred at ``(center, 0, 0)``; phase
    ``exp(i sigma c z)`` with ``c = |grad alpha|`` at the centre, oscillating
    along the axis so it is orthogonal to ``grad alpha``.  The field returned is
    the envelope times phase divided by the weight.  The lattice step is the
    smaller of ``radius/4`` and ``q / (sigma c)``, keeping ``sigma c`` times the
    step fixed across ``sigma``.  Returns ``(box, w)``.
    """
    sub = weights.psi0.subdomains
    cs = sub.cross_section
    xc = np.asarray(center, dtype=float).reshape(cs.dim)
    radius = kappa / math.sqrt(sigma)
    if radius >= 1:
        raise ValueError("time envelope exceeds (-1, 1); raise sigma or lower kappa")
    pt = tuple(np.array([c]) for c in xc)
    c = math.sqrt(float(weights.table(pt, np.array([0.0])).grad_alpha_sq.ravel()[0]))
    step = min(radius / 4, q / (sigma * c))
    n = int(math.ceil(radius / step))
    offs = step * np.arange(-n, n + 1)
    axes = tuple(xc[d] + offs for d in range(cs.dim))
    corners = np.array(np.meshgrid(*[[a[0], a[-1]] for a in axes], indexing="ij")).reshape(cs.dim, -1).T
    d = cs.distance_to_boundary(np.vstack([corners, xc[None, :]]))
    if d.min() <= 0 or d.max() >= sub.widths[0]:
        raise ValueError(f"patch around {xc.tolist()} leaves the collar omega_0")
    tn = radius / tau_nodes
    tau = tn * np.arange(-tau_nodes, tau_nodes + 1)
    box = ParabolicBox(axes, offs.copy(), tau)
    X = box.coords()
    env = np.ones(X[0].shape)
    for k in range(cs.dim):
        env = env * smooth_bump((X[k] - xc[k])[..., None], [0.0], radius)
    env = (env[..., None, None] * smooth_bump(offs[:, None], [0.0], radius)[:, None]
           * smooth_bump(tau[:, None], [0.0], radius))
    phase = np.exp(1j * sigma * c * offs)[:, None]
    alpha = weights.table(X, tau).alpha
    w = env * phase * np.exp(-sigma * (alpha - alpha.max()))
    return box, w
