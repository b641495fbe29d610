"""Discretized truncated waveguide: cross-sections, collars, grids and strips.

Every cross-section lives on a uniform Cartesian lattice.  Fields are plain
numpy arrays of shape ``cs.shape`` (cross-section) or ``cs.shape + (nz,)``
(spatial) or ``cs.shape + (nz, nt)`` (space-time).  Lattice points outside
the closed domain carry zero and are never unknowns.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "CrossSection",
    "NestedSubdomains",
    "Grid",
    "ObservationStrip",
    "build_cross_section",
    "build_nested_subdomains",
    "build_grid",
    "build_strip",
    "japanese_bracket",
]

SHAPES = ("interval", "rectangle", "disk")
DEFAULT_MEMORY_CAP = 2 * 1024**3


def japanese_bracket(s):
    """Return ``(1 + s**2) ** 0.5`` elementwise."""
    s = np.asarray(s, dtype=float)
    return np.sqrt(1.0 + s * s)


def _neighbour_any(mask: np.ndarray) -> np.ndarray:
    """True where at least one axis neighbour of the node is set in ``mask``."""
    out = np.zeros_like(mask)
    for ax in range(mask.ndim):
        lo = [slice(None)] * mask.ndim
        hi = [slice(None)] * mask.ndim
        lo[ax] = slice(0, -1)
        hi[ax] = slice(1, None)
        out[tuple(lo)] |= mask[tuple(hi)]
        out[tuple(hi)] |= mask[tuple(lo)]
    return out


@dataclass(frozen=True, eq=False)
class CrossSection:
    """Lattice discretization of the bounded cross-section ``omega``.

    ``boundary_index`` lists lattice multi-indices of boundary nodes and
    ``normals`` the matching outward unit normals.
    """

    shape: str
    params: dict
    spacing: float
    axes: tuple
    interior: np.ndarray
    boundary: np.ndarray
    boundary_index: np.ndarray
    normals: np.ndarray

    @property
    def dim(self) -> int:
        return len(self.axes)

    @property
    def lattice_shape(self) -> tuple:
        return self.interior.shape

    @property
    def nodes(self) -> np.ndarray:
        return self.interior | self.boundary

    @property
    def node_count(self) -> int:
        return int(self.nodes.sum())

    @property
    def cell_volume(self) -> float:
        return self.spacing**self.dim

    def coords(self) -> tuple:
        """Coordinate arrays broadcast to the lattice shape."""
        return tuple(np.meshgrid(*self.axes, indexing="ij"))

    def boundary_points(self) -> np.ndarray:
        return np.stack(
            [self.axes[d][self.boundary_index[:, d]] for d in range(self.dim)],
            axis=1,
        )

    def distance_to_boundary(self, points=None) -> np.ndarray:
        """Signed distance to the boundary (positive inside)."""
        if points is None:
            pts = self.coords()
        else:
            pts = tuple(np.asarray(points, dtype=float)[..., d] for d in range(self.dim))
        if self.shape == "interval":
            (x,) = pts
            return np.minimum(x, self.params["length"] - x)
        if self.shape == "rectangle":
            x, y = pts
            lx, ly = self.params["lengths"]
            return np.minimum(np.minimum(x, lx - x), np.minimum(y, ly - y))
        x, y = pts
        return self.params["radius"] - np.hypot(x, y)

    @property
    def inradius(self) -> float:
        if self.shape == "interval":
            return self.params["length"] / 2
        if self.shape == "rectangle":
            return min(self.params["lengths"]) / 2
        return self.params["radius"]

    @property
    def area(self) -> float:
        if self.shape == "interval":
            return self.params["length"]
        if self.shape == "rectangle":
            lx, ly = self.params["lengths"]
            return lx * ly
        return math.pi * self.params["radius"] ** 2

    def contains_closure(self, point) -> bool:
        point = np.asarray(point, dtype=float).reshape(self.dim)
        return bool(self.distance_to_boundary(point[None, :])[0] >= 0.0)

    def sup_sq_distance(self, point) -> float:
        """Exact ``sup |x' - point|**2`` over the closed continuous domain."""
        point = np.asarray(point, dtype=float).reshape(self.dim)
        if self.shape == "interval":
            length = self.params["length"]
            return float(max(point[0] ** 2, (length - point[0]) ** 2))
        if self.shape == "rectangle":
            lx, ly = self.params["lengths"]
            corners = np.array([[0, 0], [lx, 0], [0, ly], [lx, ly]], dtype=float)
            return float(((corners - point) ** 2).sum(axis=1).max())
        return float((np.hypot(*point) + self.params["radius"]) ** 2)

    def boundary_field(self, values: np.ndarray) -> np.ndarray:
        """Gather ``values[..., lattice]`` at boundary nodes (leading lattice axes)."""
        idx = tuple(self.boundary_index[:, d] for d in range(self.dim))
        return values[idx]


def build_cross_section(shape: str, params, spacing: float) -> CrossSection:
    """Build a lattice cross-section.

    ``params`` is a length (interval), a pair of side lengths (rectangle), or
    a radius (disk); a mapping with keys ``length``, ``lengths`` or
    ``radius`` is accepted as well.
    """
    if shape not in SHAPES:
        raise ValueError(f"unknown cross-section shape {shape!r}; expected one of {SHAPES}")
    if not spacing > 0:
        raise ValueError(f"mesh spacing must be positive, got {spacing}")
    if isinstance(params, dict):
        params = params.get("length", params.get("lengths", params.get("radius")))

    if shape == "interval":
        length = float(np.asarray(params).reshape(-1)[0])
        if not length > 0:
            raise ValueError(f"degenerate interval: length {length} has zero measure")
        n = int(round(length / spacing)) + 1
        if n < 3:
            raise ValueError("degenerate interval: fewer than three nodes at this spacing")
        x = np.linspace(0.0, length, n)
        interior = np.zeros(n, dtype=bool)
        interior[1:-1] = True
        boundary = ~interior
        bidx = np.array([[0], [n - 1]])
        normals = np.array([[-1.0], [1.0]])
        return CrossSection(shape, {"length": length}, length / (n - 1), (x,),
                            interior, boundary, bidx, normals)

    if shape == "rectangle":
        lx, ly = (float(v) for v in np.asarray(params, dtype=float).reshape(2))
        if not (lx > 0 and ly > 0):
            raise ValueError(f"degenerate rectangle {lx}x{ly}: zero area")
        nx = int(round(lx / spacing)) + 1
        ny = int(round(ly / spacing)) + 1
        if abs((nx - 1) * spacing - lx) > 1e-9 * lx or abs((ny - 1) * spacing - ly) > 1e-9 * ly:
            raise ValueError("rectangle sides must be integer multiples of the spacing")
        if nx < 3 or ny < 3:
            raise ValueError("degenerate rectangle: fewer than three nodes per side")
        x = np.linspace(0.0, lx, nx)
        y = np.linspace(0.0, ly, ny)
        interior = np.zeros((nx, ny), dtype=bool)
        interior[1:-1, 1:-1] = True
        boundary = ~interior
        bidx = np.argwhere(boundary)
        normals = np.zeros((len(bidx), 2))
        normals[bidx[:, 0] == 0, 0] = -1.0
        normals[bidx[:, 0] == nx - 1, 0] = 1.0
        normals[bidx[:, 1] == 0, 1] = -1.0
        normals[bidx[:, 1] == ny - 1, 1] = 1.0
        normals /= np.linalg.norm(normals, axis=1, keepdims=True)
        return CrossSection(shape, {"lengths": (lx, ly)}, float(spacing), (x, y),
                            interior, boundary, bidx, normals)

    radius = float(np.asarray(params).reshape(-1)[0])
    if not radius > 0:
        raise ValueError(f"degenerate disk: radius {radius} has zero area")
    k = int(math.ceil(radius / spacing)) + 1
    ax = spacing * np.arange(-k, k + 1, dtype=float)
    X, Y = np.meshgrid(ax, ax, indexing="ij")
    r = np.hypot(X, Y)
    interior = r < radius - spacing / 2
    if not interior.any():
        raise ValueError("degenerate disk: no interior node at this spacing")
    boundary = (~interior) & (r <= radius + spacing / 2) & _neighbour_any(interior)
    bidx = np.argwhere(boundary)
    pts = np.stack([ax[bidx[:, 0]], ax[bidx[:, 1]]], axis=1)
    normals = pts / np.linalg.norm(pts, axis=1, keepdims=True)
    return CrossSection(shape, {"radius": radius}, float(spacing), (ax, ax.copy()),
                        interior, boundary, bidx, normals)


@dataclass(frozen=True, eq=False)
class NestedSubdomains:
    """Boundary collars ``omega_j = {dist(x', boundary) < w_j}`` as node masks."""

    cross_section: CrossSection
    widths: tuple
    omega: tuple
    s_sharp: np.ndarray

    def core(self, j: int) -> np.ndarray:
        """Cross-section of ``Omega_j``: domain nodes outside ``omega_j``."""
        return self.cross_section.nodes & ~self.omega[j]

    @property
    def ring(self) -> np.ndarray:
        """Cross-section of ``Omega_3 minus Omega_2`` (equal to ``omega_2 minus omega_3``)."""
        return self.omega[2] & ~self.omega[3]


def build_nested_subdomains(cs: CrossSection, collar_widths) -> NestedSubdomains:
    widths = tuple(float(w) for w in collar_widths)
    if len(widths) != 4:
        raise ValueError("exactly four collar widths w0 > w1 > w2 > w3 > 0 are required")
    if not all(a > b for a, b in zip(widths, widths[1:])) or widths[-1] <= 0:
        raise ValueError(f"collar widths must satisfy w0 > w1 > w2 > w3 > 0, got {widths}")
    if widths[0] >= cs.inradius:
        raise ValueError(f"w0={widths[0]} must lie below the inradius {cs.inradius}")
    dist = cs.distance_to_boundary()
    nodes = cs.nodes
    tol = 1e-9 * cs.spacing  # round-off guard: nodes exactly at distance w are excluded
    omega = tuple(nodes & (dist < w - tol) for w in widths)
    for j in range(1, 4):
        if not (omega[j].sum() < omega[j - 1].sum() and not (omega[j] & ~omega[j - 1]).any()):
            raise ValueError(f"mesh too coarse: omega_{j} is not a strict subset of omega_{j - 1}")
    for j in range(4):
        if (cs.boundary & ~omega[j]).any():
            raise ValueError(f"boundary not contained in omega_{j}")
    s_sharp = omega[0] & _neighbour_any(nodes & ~omega[0])
    return NestedSubdomains(cs, widths, omega, s_sharp)


@dataclass(frozen=True, eq=False)
class Grid:
    """Tensor grid of the truncated cylinder ``omega x (-R, R)`` and ``[0, T]``."""

    cross_section: CrossSection
    R: float
    dz: float
    T: float
    dt: float
    z: np.ndarray
    t: np.ndarray
    unknown_index: np.ndarray = field(repr=False)

    @property
    def nz(self) -> int:
        return len(self.z)

    @property
    def nt(self) -> int:
        return len(self.t)

    @property
    def shape(self) -> tuple:
        return self.cross_section.lattice_shape + (self.nz,)

    @property
    def unknowns(self) -> np.ndarray:
        return self.unknown_index >= 0

    @property
    def n_unknowns(self) -> int:
        return int(self.unknowns.sum())

    @property
    def nodes(self) -> np.ndarray:
        return np.broadcast_to(self.cross_section.nodes[..., None], self.shape)

    @property
    def node_count(self) -> int:
        return self.cross_section.node_count * self.nz

    @property
    def cell_volume(self) -> float:
        return self.cross_section.cell_volume * self.dz

    @property
    def spacings(self) -> tuple:
        return (self.cross_section.spacing,) * self.cross_section.dim + (self.dz,)

    @property
    def n(self) -> int:
        """Dimension of the waveguide (cross-section dimension plus one)."""
        return self.cross_section.dim + 1

    def coords(self) -> tuple:
        return tuple(np.meshgrid(*self.cross_section.axes, self.z, indexing="ij"))

    def l2_norm(self, f: np.ndarray, mask=None) -> float:
        """Discrete L2 norm over spatial nodes (lattice sum times cell volume)."""
        a = np.abs(f) ** 2
        if mask is not None:
            a = np.where(mask, a, 0.0)
        return float(np.sqrt(a.sum() * self.cell_volume))


def build_grid(cs: CrossSection, R: float, spacing_axial: float, T: float, dt: float, *,
               decay=None, truncation_tolerance: float = 1e-3,
               memory_cap: float = DEFAULT_MEMORY_CAP) -> Grid:
    """Build the space-time grid; ``decay=(b, d)`` activates the truncation check."""
    for name, val in (("R", R), ("axial spacing", spacing_axial), ("T", T), ("dt", dt)):
        if not val > 0:
            raise ValueError(f"{name} must be positive, got {val}")
    if decay is not None:
        b, d = decay
        tail = math.exp(-b * float(japanese_bracket(R)) ** d)
        if not tail < truncation_tolerance:
            raise ValueError(
                f"axial truncation too short: exp(-b<R>^d) = {tail:.3e} >= {truncation_tolerance}")
    nz = int(round(2 * R / spacing_axial)) + 1
    nt = int(round(T / dt)) + 1
    estimate = float(np.prod(cs.lattice_shape)) * nz * nt * 16
    if estimate > memory_cap:
        raise ValueError(
            f"trajectory memory estimate {estimate / 1024**2:.1f} MiB exceeds cap "
            f"{memory_cap / 1024**2:.1f} MiB")
    z = np.linspace(-R, R, nz)
    t = np.linspace(0.0, T, nt)
    unk = np.broadcast_to(cs.interior[..., None], cs.lattice_shape + (nz,)).copy()
    unk[..., 0] = False
    unk[..., -1] = False
    index = np.full(unk.shape, -1, dtype=np.int64)
    index[unk] = np.arange(int(unk.sum()))
    return Grid(cs, float(R), 2 * R / (nz - 1), float(T), T / (nt - 1), z, t, index)


@dataclass(frozen=True, eq=False)
class ObservationStrip:
    """Boundary strip ``S_*``: a subset of the boundary nodes with quadrature weights."""

    cross_section: CrossSection
    members: np.ndarray   # indices into cs.boundary_index
    weights: np.ndarray   # measure carried by each member node

    @property
    def index(self) -> np.ndarray:
        return self.cross_section.boundary_index[self.members]

    @property
    def normals(self) -> np.ndarray:
        return self.cross_section.normals[self.members]

    @property
    def points(self) -> np.ndarray:
        return self.cross_section.boundary_points()[self.members]

    @property
    def covers_boundary(self) -> bool:
        return len(self.members) == len(self.cross_section.boundary_index)

    def mask(self) -> np.ndarray:
        m = np.zeros(self.cross_section.lattice_shape, dtype=bool)
        m[tuple(self.index.T)] = True
        return m


def _contiguous_runs(flags: np.ndarray) -> int:
    """Longest cyclic run of True values."""
    if flags.all():
        return len(flags)
    doubled = np.concatenate([flags, flags])
    best = run = 0
    for f in doubled:
        run = run + 1 if f else 0
        best = max(best, run)
    return min(best, len(flags))


def build_strip(cs: CrossSection, spec=None) -> ObservationStrip:
    """Select the observation strip.

    ``spec`` is ``None``/``"full"`` for the whole boundary, an angular
    interval ``(theta_lo, theta_hi)`` in radians for the disk, a pair
    ``(edge, (a, b))`` with edge in {bottom, top, left, right} for the
    rectangle, or one of ``"left"``, ``"right"``, ``"both"`` for the interval.
    """
    nb = len(cs.boundary_index)
    pts = cs.boundary_points()
    weights = np.zeros(nb)
    order = None
    if cs.shape == "interval":
        weights[:] = 1.0
        if spec in (None, "full", "both"):
            sel = np.ones(nb, dtype=bool)
        elif spec == "left":
            sel = np.array([True, False])
        elif spec == "right":
            sel = np.array([False, True])
        else:
            raise ValueError(f"bad interval strip {spec!r}")
    elif cs.shape == "disk":
        theta = np.arctan2(pts[:, 1], pts[:, 0]) % (2 * np.pi)
        order = np.argsort(theta, kind="stable")
        ts = theta[order]
        gaps = np.diff(np.concatenate([ts[-1:] - 2 * np.pi, ts, ts[:1] + 2 * np.pi]))
        weights[order] = cs.params["radius"] * 0.5 * (gaps[:-1] + gaps[1:])
        if spec in (None, "full"):
            sel = np.ones(nb, dtype=bool)
        else:
            lo, hi = (float(v) for v in spec)
            width = hi - lo
            if not 0 < width <= 2 * np.pi:
                raise ValueError(f"angular interval {spec} must have positive width <= 2*pi")
            rel = (theta - lo) % (2 * np.pi)
            sel = (rel > 0) & (rel < width)
    else:
        h = cs.spacing
        lx, ly = cs.params["lengths"]
        x, y = pts[:, 0], pts[:, 1]
        on = {
            "bottom": np.isclose(y, 0.0), "top": np.isclose(y, ly),
            "left": np.isclose(x, 0.0), "right": np.isclose(x, lx),
        }
        corner = (on["bottom"] | on["top"]) & (on["left"] | on["right"])
        weights[:] = h
        weights[corner] = h  # two half-cells, one per incident edge
        if spec in (None, "full"):
            sel = np.ones(nb, dtype=bool)
        else:
            edge, (a, b) = spec
            if edge not in on:
                raise ValueError(f"unknown rectangle edge {edge!r}")
            along = x if edge in ("bottom", "top") else y
            sel = on[edge] & (along > a) & (along < b)
            weights = np.where(corner, h / 2, weights)
        # traverse boundary counter-clockwise for contiguity
        cx, cy = lx / 2, ly / 2
        order = np.argsort(np.arctan2(y - cy, x - cx) % (2 * np.pi), kind="stable")
    members = np.flatnonzero(sel)
    if len(members) == 0:
        raise ValueError("observation strip is empty")
    if cs.dim == 2 and _contiguous_runs(sel[order]) < 3:
        raise ValueError("observation strip must contain at least 3 contiguous boundary nodes")
    return ObservationStrip(cs, members, weights[members])
