"""Crank-Nicolson solver for ``-i u_t - Laplace u + p u = 0`` with Dirichlet walls and caps.

Also provides the compatibility chain for initial data, one-sided Neumann
traces on the observation strip and the ``H^1(0,T; L^2)`` observation norm.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import Grid, NestedSubdomains, ObservationStrip, japanese_bracket

__all__ = [
    "InitialData",
    "WaveTrajectory",
    "NeumannTrace",
    "laplacian_matrix",
    "hamiltonian",
    "lattice_laplacian",
    "sample",
    "compatibility_chain",
    "solve_forward",
    "neumann_trace",
    "trace_norm",
    "observation_gap",
    "sobolev_l2_surrogate",
]

SOLVE_RTOL = 1e-12


def sample(grid: Grid, func) -> np.ndarray:
    """Evaluate ``func(*coords)`` on the full spatial lattice."""
    return np.asarray(func(*grid.coords()), dtype=float)


def laplacian_matrix(grid: Grid) -> sp.csr_matrix:
    """Second-order Laplacian on the unknowns with homogeneous Dirichlet closure."""
    idx = grid.unknown_index
    n = grid.n_unknowns
    rows, cols, vals = [], [], []
    diag = np.zeros(n)
    for ax, h in enumerate(grid.spacings):
        c = 1.0 / (h * h)
        diag -= 2.0 * c
        lo = [slice(None)] * idx.ndim
        hi = [slice(None)] * idx.ndim
        lo[ax] = slice(0, -1)
        hi[ax] = slice(1, None)
        a, b = idx[tuple(lo)], idx[tuple(hi)]
        both = (a >= 0) & (b >= 0)
        rows += [a[both], b[both]]
        cols += [b[both], a[both]]
        vals += [np.full(int(both.sum()), c)] * 2
    rows.append(np.arange(n))
    cols.append(np.arange(n))
    vals.append(diag)
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(n, n))


def hamiltonian(grid: Grid, p: np.ndarray) -> sp.csr_matrix:
    """``H = -Laplace_h + p`` restricted to the unknowns."""
    p = np.asarray(p)
    if np.iscomplexobj(p):
        raise TypeError("potential must be real")
    if p.shape != grid.shape:
        raise ValueError(f"potential shape {p.shape} does not match grid {grid.shape}")
    return (-laplacian_matrix(grid) + sp.diags(p[grid.unknowns].astype(float))).tocsr()


def lattice_laplacian(f: np.ndarray, spacings) -> np.ndarray:
    """Centred Laplacian on the full lattice; nodes whose stencil leaves the lattice get NaN."""
    out = np.zeros(f.shape, dtype=np.result_type(f, float))
    for ax, h in enumerate(spacings):
        pad = [(0, 0)] * f.ndim
        pad[ax] = (1, 1)
        g = np.moveaxis(np.pad(f.astype(out.dtype), pad, constant_values=np.nan), ax, 0)
        d2 = (g[:-2] - 2.0 * g[1:-1] + g[2:]) / (h * h)
        out += np.moveaxis(d2, 0, ax)
    return out


def _padded_axes(grid: Grid, layers: int) -> list:
    axes = list(grid.cross_section.axes) + [grid.z]
    out = []
    for a, h in zip(axes, grid.spacings):
        ext = h * np.arange(1, layers + 1)
        out.append(np.concatenate([a[0] - ext[::-1], a, a[-1] + ext]))
    return out


def compatibility_chain(u0, p0, k: int, grid: Grid, tol=None):
    """Return ``(chain, residuals, compatible)`` for ``v_j = (-Laplace + p0) v_{j-1}``.

    ``u0`` and ``p0`` may be callables of the spatial coordinates; they are
    then sampled on a lattice padded by ``k - 1`` layers so that the centred
    stencil never leaves it.  Array data is used as given and a stencil that
    leaves the lattice at a domain node is an error.  Residuals are maxima of
    ``|v_j|`` over lateral boundary nodes; the default tolerance is
    ``h^2 (1 + max |v_j|)`` with ``h`` the largest spacing.
    """
    if k < 1:
        raise ValueError("compatibility order k must be >= 1")
    layers = k - 1 if callable(u0) else 0
    core = tuple(slice(layers, layers + n) for n in grid.shape)
    coords = np.meshgrid(*_padded_axes(grid, layers), indexing="ij")
    v = np.asarray(u0(*coords) if callable(u0) else u0, dtype=float)
    if callable(p0):
        pot = np.asarray(p0(*coords), dtype=float)
    elif np.ndim(p0) == 0:
        pot = float(p0)
    else:
        pot = np.pad(np.asarray(p0, dtype=float), layers, mode="edge")
    nodes = grid.nodes
    chain = [v[core]]
    for _ in range(1, k):
        v = -lattice_laplacian(v, grid.spacings) + pot * v
        if np.isnan(v[core][nodes]).any():
            raise ValueError(f"compatibility order {k} exceeds what the discrete data supports")
        chain.append(v[core])
    lateral = np.broadcast_to(grid.cross_section.boundary[..., None], grid.shape)
    hmax = max(grid.spacings)
    residuals = [float(np.abs(c[lateral]).max()) for c in chain]
    tols = [hmax**2 * (1.0 + float(np.abs(c[nodes]).max())) if tol is None else tol for c in chain]
    compatible = all(r <= t for r, t in zip(residuals, tols))
    return chain, residuals, compatible


def sobolev_l2_surrogate(f: np.ndarray, grid: Grid, order: int, mask=None) -> float:
    """``sqrt(sum_{|alpha|<=order} ||D^alpha f||^2)`` with centred differences."""
    mask = grid.nodes if mask is None else mask
    total = 0.0
    layer = {(): np.asarray(f)}
    total += float((np.abs(f[mask]) ** 2).sum())
    for _ in range(order):
        nxt = {}
        for key, arr in layer.items():
            for ax in range(key[-1] if key else 0, len(grid.spacings)):
                nxt[key + (ax,)] = np.gradient(arr, grid.spacings[ax], axis=ax, edge_order=2)
        layer = nxt
        total += sum(float((np.abs(a[mask]) ** 2).sum()) for a in layer.values())
    return math.sqrt(total * grid.cell_volume)


@dataclass(frozen=True, eq=False)
class InitialData:
    """Initial state with the non-degeneracy and size conditions checked on the grid.

    The lower bound ``|u0| >= kappa <x_n>^(-d0/2)`` is checked on
    ``(omega minus omega_0)`` nodes with ``|x_n| <= axial_window``; the
    default window stops two axial spacings short of the artificial caps.
    """

    u0: np.ndarray
    k: int
    kappa: float
    d0: float
    M_prime: float
    nondegenerate: bool
    size_norm: float

    @property
    def bounded(self) -> bool:
        return self.size_norm <= self.M_prime


def make_initial_data(u0, grid: Grid, subdomains: NestedSubdomains, *, k: int, kappa: float,
                      d0: float, d: float, M_prime: float, N: int = 1,
                      axial_window=None) -> InitialData:
    u0 = np.asarray(u0, dtype=float)
    if not (kappa > 0 and 0 < d0 < 2 * d / 3):
        raise ValueError("need kappa > 0 and 0 < d0 < 2d/3")
    win = grid.R - 2 * grid.dz if axial_window is None else axial_window
    zsel = np.abs(grid.z) <= win
    region = subdomains.core(0)[..., None] & zsel
    floor = kappa * japanese_bracket(grid.z) ** (-d0 / 2)
    ok = bool(np.all((np.abs(u0) >= floor)[region]))
    size = sobolev_l2_surrogate(u0, grid, 2 * (N + 1))
    return InitialData(u0, k, kappa, d0, M_prime, ok, size)


@dataclass(frozen=True, eq=False)
class WaveTrajectory:
    grid: Grid
    u: np.ndarray           # grid.shape + (n_stored,)
    t: np.ndarray
    dt: float
    stride: int
    solve_residual: float

    def l2_norms(self) -> np.ndarray:
        a = np.abs(self.u) ** 2
        return np.sqrt(a.reshape(-1, a.shape[-1]).sum(axis=0) * self.grid.cell_volume)

    def unitarity_drift(self) -> float:
        n = self.l2_norms()
        return float(np.max(np.abs(n - n[0])) / n[0]) if n[0] > 0 else float(np.max(n))

    def h1_norms(self) -> np.ndarray:
        g = self.grid
        out = np.abs(self.u) ** 2
        for ax, h in enumerate(g.spacings):
            out = out + np.abs(np.gradient(self.u, h, axis=ax)) ** 2
        out = np.where(g.nodes[..., None], out, 0.0)
        return np.sqrt(out.reshape(-1, out.shape[-1]).sum(axis=0) * g.cell_volume)

    def c1_linf(self) -> float:
        """``max |u| + max |u_t|`` over the stored levels."""
        ut = np.gradient(self.u, self.dt * self.stride, axis=-1, edge_order=2)
        return float(np.abs(self.u).max() + np.abs(ut).max())

    def energy_report(self, u0_norm: float) -> dict:
        h1 = self.h1_norms()
        return {
            "l2_drift": self.unitarity_drift(),
            "h1_max": float(h1.max()),
            "h1_over_data": float(h1.max() / u0_norm) if u0_norm > 0 else 0.0,
            "c1_linf": self.c1_linf(),
        }


def solve_forward(p: np.ndarray, u0: np.ndarray, grid: Grid, *, stride: int = 1,
                  backward: bool = False) -> WaveTrajectory:
    """Integrate with Crank-Nicolson; ``backward=True`` steps ``t -> -t``."""
    u0 = np.asarray(u0)
    H = hamiltonian(grid, p)
    nodes = grid.nodes
    unk = grid.unknowns
    fixed = nodes & ~unk
    if np.any(u0[fixed] != 0):
        raise ValueError("initial data must vanish on the lateral boundary and on the caps")
    dt = -grid.dt if backward else grid.dt
    n = grid.n_unknowns
    eye = sp.identity(n, dtype=complex, format="csc")
    A = (eye + 0.5j * dt * H).tocsc()
    B = (eye - 0.5j * dt * H).tocsr()
    lu = spla.splu(A)
    nt = grid.nt
    levels = list(range(0, nt, stride))
    out = np.zeros(grid.shape + (len(levels),), dtype=complex)
    out[..., 0] = np.where(nodes, u0, 0)
    x = u0[unk].astype(complex)
    worst = 0.0
    slot = 1
    for m in range(1, nt):
        rhs = B @ x
        x = lu.solve(rhs)
        nr = np.linalg.norm(rhs)
        if nr > 0:
            res = float(np.linalg.norm(A @ x - rhs) / nr)
            worst = max(worst, res)
            if res > SOLVE_RTOL:
                raise RuntimeError(f"linear solve residual {res:.3e} exceeds {SOLVE_RTOL}")
        if slot < len(levels) and m == levels[slot]:
            out[..., slot][unk] = x
            slot += 1
    t = grid.t[levels] * (-1 if backward else 1)
    return WaveTrajectory(grid, out, t, grid.dt, stride, worst)


def _interp_matrix(cs, points: np.ndarray) -> sp.csr_matrix:
    """Sparse multilinear interpolation from lattice values to ``points``."""
    dim = cs.dim
    shape = cs.lattice_shape
    h = cs.spacing
    rows, cols, vals = [], [], []
    for r, pt in enumerate(points):
        base, frac = [], []
        for d in range(dim):
            s = (pt[d] - cs.axes[d][0]) / h
            i = int(np.clip(np.floor(s + 1e-12), 0, shape[d] - 2))
            base.append(i)
            frac.append(s - i)
        for corner in itertools.product((0, 1), repeat=dim):
            w = 1.0
            for d in range(dim):
                w *= frac[d] if corner[d] else 1.0 - frac[d]
            if abs(w) < 1e-14:
                continue
            idx = tuple(base[d] + corner[d] for d in range(dim))
            rows.append(r)
            cols.append(np.ravel_multi_index(idx, shape))
            vals.append(w)
    m = sp.csr_matrix((vals, (rows, cols)), shape=(len(points), int(np.prod(shape))))
    m.eliminate_zeros()
    return m


@dataclass(frozen=True, eq=False)
class NeumannTrace:
    values: np.ndarray    # (n_strip, nz, nt)
    t: np.ndarray
    weights: np.ndarray
    dz: float

    @property
    def norm(self) -> float:
        return trace_norm(self.values, self.t, self.weights, self.dz)


def trace_norm(g: np.ndarray, t: np.ndarray, weights: np.ndarray, dz: float) -> float:
    """``H^1(0,T; L^2(Gamma_*))`` norm with trapezoidal time quadrature."""
    if not np.any(g):
        return 0.0
    dt = t[1] - t[0]
    gt = np.gradient(g, dt, axis=-1, edge_order=2)
    w = weights[:, None, None] * dz
    dens = ((np.abs(g) ** 2 + np.abs(gt) ** 2) * w).sum(axis=(0, 1))
    return float(math.sqrt(np.trapezoid(dens, t)))


def neumann_trace(traj: WaveTrajectory, strip: ObservationStrip) -> NeumannTrace:
    """One-sided second-order normal derivative on ``strip x (-R, R) x levels``."""
    cs = traj.grid.cross_section
    if strip.cross_section is not cs:
        raise ValueError("strip and trajectory live on different cross-sections")
    if len(strip.members) == 0:
        raise ValueError("strip is disjoint from the boundary")
    h = cs.spacing
    pts = strip.points
    nrm = strip.normals
    P1 = _interp_matrix(cs, pts - h * nrm)
    P2 = _interp_matrix(cs, pts - 2 * h * nrm)
    ncs = int(np.prod(cs.lattice_shape))
    U = traj.u.reshape(ncs, -1)
    ub = U[np.ravel_multi_index(tuple(strip.index.T), cs.lattice_shape)]
    vals = (3 * ub - 4 * (P1 @ U) + P2 @ U) / (2 * h)
    vals = vals.reshape((len(pts),) + traj.u.shape[cs.dim:])
    return NeumannTrace(vals, traj.t, strip.weights, traj.grid.dz)


def observation_gap(p1, p2, u0, grid: Grid, strip: ObservationStrip, *, trajectories=None) -> float:
    """``|| d_nu (u1 - u2) ||_*`` for the two potentials and a shared initial state."""
    if trajectories is None:
        if np.array_equal(p1, p2):
            return 0.0
        trajectories = (solve_forward(p1, u0, grid), solve_forward(p2, u0, grid))
    t1, t2 = trajectories
    diff = WaveTrajectory(grid, t1.u - t2.u, t1.t, t1.dt, t1.stride, 0.0)
    return neumann_trace(diff, strip).norm
