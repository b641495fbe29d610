"""Electric potentials, the axially weighted decay norm and the admissible class."""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .geometry import Grid, NestedSubdomains, japanese_bracket

__all__ = [
    "PotentialField",
    "AdmissibilityReport",
    "japanese_bracket",
    "sobolev_order",
    "decay_weight",
    "weighted_sup_norm",
    "sobolev_surrogate",
    "check_admissible",
    "smooth_bump",
    "background",
    "make_test_pair",
    "tail_l2_sq",
]

_EXP_LIMIT = 700.0


def sobolev_order(n: int) -> int:
    """``N = floor(n/4) + 1`` for a waveguide in dimension ``n``."""
    return n // 4 + 1


@dataclass(frozen=True, eq=False)
class PotentialField:
    values: np.ndarray
    background: np.ndarray
    b: float
    d: float
    M: float

    def __post_init__(self):
        if np.iscomplexobj(self.values) or np.iscomplexobj(self.background):
            raise TypeError("potentials are real-valued")
        if self.values.shape != self.background.shape:
            raise ValueError("potential and background must share the grid layout")

    @property
    def perturbation(self) -> np.ndarray:
        return self.values - self.background


@dataclass(frozen=True)
class AdmissibilityReport:
    sobolev_norm: float
    decay_norm: float
    support_ok: bool
    violating_nodes: tuple
    M: float

    @property
    def sobolev_ok(self) -> bool:
        return self.sobolev_norm <= self.M

    @property
    def decay_ok(self) -> bool:
        return self.decay_norm <= self.M

    @property
    def admissible(self) -> bool:
        return self.sobolev_ok and self.decay_ok and self.support_ok


def decay_weight(z, b: float, d: float) -> np.ndarray:
    """``exp(b <z>^d)``; raises ``OverflowError`` instead of returning inf."""
    if not (b > 0 and d > 0):
        raise ValueError("decay parameters b and d must be positive")
    expo = b * japanese_bracket(z) ** d
    top = float(np.max(expo))
    if top > _EXP_LIMIT:
        raise OverflowError(
            f"decay weight overflows: b<R>^d = {top:.1f}; lower b, d or the axial half-length")
    return np.exp(expo)


def weighted_sup_norm(q: np.ndarray, grid: Grid, b: float, d: float) -> float:
    """Max over domain nodes of ``exp(b <x_n>^d) |q|``."""
    q = np.asarray(q)
    if np.iscomplexobj(q):
        raise TypeError("weighted norm expects a real field")
    w = decay_weight(grid.z, b, d)
    vals = np.abs(q) * w
    return float(np.max(np.where(grid.nodes, vals, 0.0)))


def sobolev_surrogate(p: np.ndarray, grid: Grid, order: int) -> float:
    """Max over domain nodes of ``|D^alpha p|`` for all multi-indices ``|alpha| <= order``.

    Derivatives are iterated second-order centred differences on the full
    lattice, so ``p`` must be defined (smoothly) on the whole bounding box.
    """
    spacings = grid.spacings
    ndim = len(spacings)
    nodes = grid.nodes
    best = float(np.max(np.abs(p[nodes])))
    layer = {(): np.asarray(p, dtype=float)}
    for _ in range(order):
        nxt = {}
        for key, arr in layer.items():
            start = key[-1] if key else 0
            for ax in range(start, ndim):
                nxt[key + (ax,)] = np.gradient(arr, spacings[ax], axis=ax, edge_order=2)
        layer = nxt
        for arr in layer.values():
            best = max(best, float(np.max(np.abs(arr[nodes]))))
    return best


def check_admissible(p, p0, subdomains: NestedSubdomains, M: float, b: float, d: float,
                     N: int, grid: Grid) -> AdmissibilityReport:
    p = np.asarray(p, dtype=float)
    p0 = np.asarray(p0, dtype=float)
    if p.shape != p0.shape or p.shape != grid.shape:
        raise ValueError("p and p0 must live on the grid layout")
    diff = p - p0
    inner = np.broadcast_to(subdomains.omega[0][..., None], grid.shape)
    bad = np.argwhere(inner & (diff != 0.0))
    return AdmissibilityReport(
        sobolev_norm=sobolev_surrogate(p, grid, 2 * N),
        decay_norm=weighted_sup_norm(diff, grid, b, d),
        support_ok=len(bad) == 0,
        violating_nodes=tuple(map(tuple, bad[:32].tolist())),
        M=float(M),
    )


def smooth_bump(points, center, width) -> np.ndarray:
    """C-infinity bump ``exp(1 - 1/(1 - r^2/width^2))`` with peak 1, support ``r < width``."""
    pts = np.stack(points, axis=-1) if isinstance(points, tuple) else np.asarray(points)
    c = np.asarray(center, dtype=float)
    r2 = ((pts - c) ** 2).sum(axis=-1) / width**2
    out = np.zeros(r2.shape)
    inside = r2 < 1.0
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - r2[inside]))
    return out


def background(grid: Grid, spec=None) -> np.ndarray:
    """Background potential on the grid layout.

    ``spec`` is ``None`` (zero), a number (constant) or a mapping with keys
    ``constant`` and ``quadratic`` giving ``c + a |x'|^2``.
    """
    shape = grid.shape
    if spec is None:
        return np.zeros(shape)
    if isinstance(spec, (int, float)):
        return np.full(shape, float(spec))
    c = float(spec.get("constant", 0.0))
    a = float(spec.get("quadratic", 0.0))
    xs = grid.coords()[:-1]
    return c + a * sum(x * x for x in xs)


def make_test_pair(grid: Grid, subdomains: NestedSubdomains, seed: int, amplitude: float,
                   center, width: float, b: float, d: float, p0=None):
    """Return ``(p1, p2)`` with ``p1 - p2 = amplitude * bump(x') * exp(-2b<x_n>^d)``.

    The seed draws a shared perturbation of the same shape so that neither
    potential equals the background, while the difference stays exact.
    """
    cs = grid.cross_section
    center = np.asarray(center, dtype=float).reshape(cs.dim)
    if not width > 0:
        raise ValueError("bump width must be positive")
    margin = float(cs.distance_to_boundary(center[None, :])[0]) - width
    if margin < subdomains.widths[0]:
        raise ValueError(
            f"bump support reaches omega_0: dist(center) - width = {margin:.4g} "
            f"< w0 = {subdomains.widths[0]}")
    if p0 is None:
        p0 = np.zeros(grid.shape)
    profile = smooth_bump(cs.coords(), center, width)
    profile[subdomains.omega[0]] = 0.0
    axial = np.exp(-2.0 * b * japanese_bracket(grid.z) ** d)
    shape_field = profile[..., None] * axial
    shared = np.random.default_rng(seed).uniform(0.0, 0.5)
    p2 = p0 + shared * amplitude * shape_field
    p1 = p2 + amplitude * shape_field
    return p1, p2


def tail_l2_sq(q: np.ndarray, grid: Grid, y: float) -> float:
    """Squared L2 norm of ``q`` over ``omega x {|x_n| >= y}``."""
    sel = np.abs(grid.z) >= y
    a = np.where(grid.nodes, np.abs(q) ** 2, 0.0)[..., sel]
    return float(a.sum() * grid.cell_volume)
