"""Super-Gaussian FBI kernel, smooth time cutoff and the partial FBI transform in time.

The kernel is the inverse Fourier transform of ``exp(-(eta / gamma^rho)^(2m))``
with ``rho = 1 - 1/(2m)``; after the substitution ``eta = gamma^rho xi`` it is
a trapezoid sum over ``xi`` with spacing 1/64.  The ``xi`` range starts at
``[-6, 6]`` and widens until the integrand at the ends is negligible for the
largest ``|Im z|`` requested.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .carleman import dirichlet_laplacian

__all__ = [
    "default_m",
    "FbiKernel",
    "eval_kernel",
    "gaussian_closed_form",
    "kernel_integral",
    "verify_kernel_bounds",
    "cone_decay_exponent",
    "TimeCutoff",
    "make_cutoff",
    "FbiField",
    "partial_fbi",
    "fbi_at",
    "frequency_error",
    "time_domain_error",
    "approximation_rate",
    "transform_on_window",
    "single_mode_error",
    "cauchy_disc_average",
    "build_chi",
    "parabolic_residual",
]

XI_STEP = 1.0 / 64.0
XI_MAX = 6.0
TAIL_TOL = 1e-17
CHUNK = 4096


def default_m(N: int, mu: float = 0.5) -> int:
    """Smallest ``m`` with ``2m >= N`` and ``1 - 1/(2m) > mu``."""
    if not 0 < mu < 1:
        raise ValueError("mu must lie in (0, 1)")
    m = max(1, math.ceil(N / 2))
    while not 1 - 1 / (2 * m) > mu:
        m += 1
    return m


def _xi_nodes(m: int, gr: float, im_max: float):
    """Trapezoid nodes and weights in ``xi``; the range grows with ``|Im z|``."""
    xmax = XI_MAX
    while True:
        log_tail = gr * im_max * xmax - xmax ** (2 * m)
        peak = max(gr * im_max * x - x ** (2 * m) for x in np.linspace(0, xmax, 257))
        if log_tail - peak < math.log(TAIL_TOL):
            break
        xmax *= 1.25
    xi = np.arange(-xmax, xmax + XI_STEP / 2, XI_STEP)
    w = np.full(xi.shape, XI_STEP)
    w[0] = w[-1] = XI_STEP / 2
    return xi, w * np.exp(-xi ** (2 * m)), xmax


@dataclass(frozen=True, eq=False)
class FbiKernel:
    gamma: float
    m: int
    rho: float
    t: np.ndarray
    tau: np.ndarray
    table: np.ndarray     # F(t - i tau), shape (len(t), len(tau))
    xi_max: float

    @property
    def scale(self) -> float:
        """``gamma^rho``, the kernel's frequency cutoff."""
        return self.gamma ** self.rho

    def __call__(self, z) -> np.ndarray:
        return _kernel_values(np.asarray(z, dtype=complex), self.gamma, self.m)

    @property
    def real_axis(self) -> np.ndarray:
        k = int(np.argmin(np.abs(self.tau)))
        return self.table[:, k]


def _kernel_values(z: np.ndarray, gamma: float, m: int) -> np.ndarray:
    rho = 1 - 1 / (2 * m)
    gr = gamma ** rho
    im_max = float(np.abs(z.imag).max()) if z.size else 0.0
    xi, amp, _ = _xi_nodes(m, gr, im_max)
    flat = z.ravel()
    out = np.empty(flat.shape, dtype=complex)
    for s in range(0, flat.size, CHUNK):
        blk = flat[s:s + CHUNK]
        out[s:s + CHUNK] = np.exp(1j * gr * np.outer(blk, xi)) @ amp
    return (gr / (2 * math.pi) * out).reshape(z.shape)


def eval_kernel(gamma: float, m: int, t_grid, tau_grid=(0.0,)) -> FbiKernel:
    if not gamma > 1:
        raise ValueError("gamma must exceed 1")
    if m < 1:
        raise ValueError("m must be a positive integer")
    t = np.asarray(t_grid, dtype=float)
    tau = np.asarray(tau_grid, dtype=float)
    z = t[:, None] - 1j * tau[None, :]
    rho = 1 - 1 / (2 * m)
    xmax = _xi_nodes(m, gamma ** rho, float(np.abs(tau).max()))[2]
    return FbiKernel(float(gamma), int(m), rho, t, tau, _kernel_values(z, gamma, m), xmax)


def gaussian_closed_form(z, gamma: float) -> np.ndarray:
    """The ``m = 1`` kernel: ``gamma^(1/2) / (2 sqrt(pi)) exp(-gamma z^2 / 4)``."""
    z = np.asarray(z, dtype=complex)
    return math.sqrt(gamma) / (2 * math.sqrt(math.pi)) * np.exp(-gamma * z * z / 4)


def kernel_integral(gamma: float, m: int, reach: float = None, per_width: int = 32) -> float:
    """Trapezoid integral of ``F`` over ``|t| <= reach / gamma^rho``.

    The tails thin out more slowly as ``m`` grows, so the default reach is
    ``40 m``.
    """
    reach = 40.0 * m if reach is None else reach
    gr = gamma ** (1 - 1 / (2 * m))
    n = int(reach * per_width)
    t = np.linspace(-reach / gr, reach / gr, 2 * n + 1)
    return float(np.trapezoid(_kernel_values(t.astype(complex), gamma, m).real, t))


def cone_decay_exponent(gamma: float, m: int, floor: float = 1e-12) -> float:
    """Slope of ``log(-log(envelope |F(t)| / F(0)))`` against ``log t`` on the real axis.

    The envelope is the set of local maxima of ``|F|`` where it lies between
    ``floor`` and 1e-2 of ``F(0)``; the decay law ``exp(-C gamma |t|^p)``
    gives slope ``p``.
    """
    gr = gamma ** (1 - 1 / (2 * m))
    t = np.linspace(0.01, 40 / gr, 4000)
    f = np.abs(_kernel_values(t.astype(complex), gamma, m))
    f0 = float(_kernel_values(np.zeros(1, complex), gamma, m).real[0])
    peaks = np.r_[False, (f[1:-1] >= f[:-2]) & (f[1:-1] >= f[2:]), False]
    if m == 1:
        peaks[:] = True
    sel = peaks & (f < 1e-2 * f0) & (f > floor * f0)
    if sel.sum() < 3:
        raise RuntimeError("too few envelope points above the quadrature noise floor for a fit")
    return float(np.polyfit(np.log(t[sel]), np.log(-np.log(f[sel] / f0)), 1)[0])


def verify_kernel_bounds(kernel: FbiKernel, cone: float = 0.25, floor: float = 1e-12) -> dict:
    """Fit the growth constant along ``Im z`` and the decay constant inside a cone.

    ``log C1 gamma^rho`` is taken as ``log max |F|`` over the real axis (that
    is ``F(0)``).  ``C2`` is the smallest constant with
    ``log|F| <= log C1 gamma^rho + C2 gamma |Im z|^(1/rho)`` at every node;
    ``C3`` the largest with ``log|F| <= log C1 gamma^rho - C3 gamma |Re z|^(1/rho)``
    at cone nodes ``|Im z| <= cone |Re z|`` where ``gamma |Re z|^(1/rho) >= 1``
    and ``|F|`` is above ``floor`` times its peak.
    """
    g, p = kernel.gamma, 1 / kernel.rho
    mag = np.abs(kernel.table)
    log_c1 = math.log(float(np.abs(kernel.real_axis).max()))
    T, TAU = np.meshgrid(kernel.t, kernel.tau, indexing="ij")
    with np.errstate(divide="ignore"):
        logf = np.log(mag)
    grow = (TAU != 0)
    c2 = float(np.max((logf[grow] - log_c1) / (g * np.abs(TAU[grow]) ** p)))
    c2 = max(c2, 0.0)
    cone_mask = (np.abs(TAU) <= cone * np.abs(T)) & (g * np.abs(T) ** p >= 1) \
        & (mag > floor * math.exp(log_c1))
    if not cone_mask.any():
        raise RuntimeError("no cone nodes above the noise floor; widen the t range")
    c3 = float(np.min((log_c1 - logf[cone_mask]) / (g * np.abs(T[cone_mask]) ** p)))
    growth_ok = bool(np.all(logf <= log_c1 + c2 * g * np.abs(TAU) ** p + 1e-9))
    decay_ok = bool(np.all(logf[cone_mask] <= log_c1 - c3 * g * np.abs(T[cone_mask]) ** p + 1e-9))
    return {"gamma": g, "log_C1_gamma_rho": log_c1, "C2": c2, "C3": c3,
            "growth_ok": growth_ok, "decay_ok": decay_ok, "cone_nodes": int(cone_mask.sum())}


def _glue(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = np.exp(-1.0 / x[pos])
    return out


def _glue_prime(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = np.exp(-1.0 / x[pos]) / x[pos] ** 2
    return out


@dataclass(frozen=True)
class TimeCutoff:
    """Smooth ``theta`` equal to 1 on ``|eta| <= 2 T0`` and 0 on ``|eta| >= 3 T0``."""

    T0: float
    T: float

    @property
    def h(self) -> float:
        """Time scale ``T / (3 T0)`` relating ``eta`` to physical time."""
        return self.T / (3 * self.T0)

    def _s(self, eta):
        return (np.abs(np.asarray(eta, dtype=float)) - 2 * self.T0) / self.T0

    def __call__(self, eta) -> np.ndarray:
        s = self._s(eta)
        a, b = _glue(1 - s), _glue(s)
        return a / (a + b)

    def derivative(self, eta) -> np.ndarray:
        eta = np.asarray(eta, dtype=float)
        s = self._s(eta)
        a, b = _glue(1 - s), _glue(s)
        da, db = -_glue_prime(1 - s), _glue_prime(s)
        with np.errstate(invalid="ignore"):
            d = (da * b - a * db) / (a + b) ** 2
        return np.sign(eta) * d / self.T0


def make_cutoff(T0: float, T: float) -> TimeCutoff:
    if not T0 > T / 3:
        raise ValueError(f"T0 must exceed T/3 = {T / 3:.6g}")
    return TimeCutoff(float(T0), float(T))


@dataclass(frozen=True, eq=False)
class FbiField:
    """Partial transform ``w_{gamma,t}(x, tau)`` for one ``t``; values shaped ``space + (ntau,)``."""

    values: np.ndarray
    t: float
    tau: np.ndarray
    gamma: float
    m: int
    h: float


def _eta_quadrature(times: np.ndarray, cutoff: TimeCutoff, profile=None):
    """Trapezoid nodes ``eta_j = t_j / h`` and weights ``profile(eta_j) d eta`` (default ``theta``)."""
    times = np.asarray(times, dtype=float)
    dt = np.diff(times)
    if not np.allclose(dt, dt[0], rtol=1e-9, atol=0):
        raise ValueError("source times must be uniformly spaced")
    eta = times / cutoff.h
    if eta[0] > -3 * cutoff.T0 + 1e-9 * cutoff.T0 and cutoff(eta[0]) > 0 \
            or eta[-1] < 3 * cutoff.T0 - 1e-9 * cutoff.T0 and cutoff(eta[-1]) > 0:
        raise ValueError("source sample does not cover the support of theta")
    w = np.full(eta.shape, dt[0] / cutoff.h)
    w[0] = w[-1] = w[0] / 2
    return eta, w * (cutoff if profile is None else profile)(eta)


def fbi_at(values: np.ndarray, times, gamma: float, m: int, cutoff: TimeCutoff, z,
           profile=None) -> np.ndarray:
    """``int F(z - eta) theta(eta) w(h eta) d eta`` at complex points ``z``.

    ``values`` has time as its last axis; the result has shape
    ``values.shape[:-1] + z.shape``.  ``profile`` replaces ``theta`` (for
    instance by ``cutoff.derivative``).
    """
    eta, wq = _eta_quadrature(times, cutoff, profile)
    z = np.asarray(z, dtype=complex)
    alive = wq != 0
    vals = np.asarray(values)
    src = vals[..., alive].reshape(-1, int(alive.sum())) * wq[alive]
    gr = gamma ** (1 - 1 / (2 * m))
    im_max = float(np.abs(z.imag).max()) if z.size else 0.0
    xi, amp, _ = _xi_nodes(m, gr, im_max)
    # exchange the eta and xi sums: transform the source once, then synthesise at each z
    spec = src @ np.exp(-1j * gr * np.outer(eta[alive], xi))
    flat = z.ravel()
    out = np.empty((src.shape[0], flat.size), dtype=complex)
    for s in range(0, flat.size, CHUNK):
        out[:, s:s + CHUNK] = (spec * amp) @ np.exp(1j * gr * np.outer(xi, flat[s:s + CHUNK]))
    return (gr / (2 * math.pi) * out).reshape(vals.shape[:-1] + z.shape)


def partial_fbi(values: np.ndarray, times, kernel: FbiKernel, cutoff: TimeCutoff, t: float,
                tau) -> FbiField:
    """Partial FBI transform at ``z = t - i tau`` of a source sampled on ``(-T, T)``."""
    if not -cutoff.T0 < t < cutoff.T0:
        raise ValueError(f"t = {t} lies outside (-T0, T0) = ({-cutoff.T0}, {cutoff.T0})")
    tau = np.asarray(tau, dtype=float)
    vals = fbi_at(values, times, kernel.gamma, kernel.m, cutoff, t - 1j * tau)
    return FbiField(vals, float(t), tau, kernel.gamma, kernel.m, cutoff.h)


def single_mode_error(zeta0: float, gamma: float, m: int) -> float:
    """Exact error factor ``1 - exp(-(zeta0 / gamma^rho)^(2m))`` for one frequency."""
    y = zeta0 / gamma ** (1 - 1 / (2 * m))
    return float(-math.expm1(-y ** (2 * m)))


MIN_SAMPLES = 64


def _padded(signal: np.ndarray, dt: float, pad: int):
    n = signal.shape[-1]
    full = np.zeros(signal.shape[:-1] + (n * pad,), dtype=complex)
    off = (pad - 1) * n // 2
    full[..., off:off + n] = signal
    return full


def frequency_error(signal: np.ndarray, dt: float, gamma: float, m: int, pad: int = 4) -> float:
    """``||s - F * s||_{L^2(R)}`` through the DFT multiplier ``1 - exp(-(zeta/gamma^rho)^(2m))``.

    ``signal`` (time on the last axis) must already contain the cutoff and
    vanish at both ends; zero padding by ``pad`` removes circular wrap.
    """
    n = signal.shape[-1]
    if n < MIN_SAMPLES:
        raise ValueError(f"signal too short for a spectral estimate: need >= {MIN_SAMPLES} samples, got {n}")
    full = _padded(signal, dt, pad)
    zeta = 2 * math.pi * np.fft.fftfreq(full.shape[-1], d=dt)
    gr = gamma ** (1 - 1 / (2 * m))
    mult = -np.expm1(-(zeta / gr) ** (2 * m))
    spec = np.fft.fft(full, axis=-1) * mult
    # Parseval for the DFT: sum |x|^2 = sum |X|^2 / n
    return float(math.sqrt((np.abs(spec) ** 2).sum() / full.shape[-1] * dt))


def time_domain_error(signal: np.ndarray, dt: float, gamma: float, m: int, pad: int = 4) -> float:
    """Same norm as :func:`frequency_error` with the convolution done by quadrature."""
    n = signal.shape[-1]
    if n < MIN_SAMPLES:
        raise ValueError(f"signal too short for a spectral estimate: need >= {MIN_SAMPLES} samples, got {n}")
    full = _padded(signal, dt, pad)
    N = full.shape[-1]
    lags = dt * (np.arange(N) - N // 2)
    kern = _kernel_values(lags.astype(complex), gamma, m).real * dt
    conv = np.stack([np.convolve(row, kern, mode="full")[N // 2:N // 2 + N]
                     for row in full.reshape(-1, N)]).reshape(full.shape)
    return float(math.sqrt((np.abs(full - conv) ** 2).sum() * dt))


def approximation_rate(values: np.ndarray, times, gammas, m: int, cutoff: TimeCutoff,
                       window: float = None) -> dict:
    """Fit the log-log slope of ``||theta w~ - w_gamma||`` against ``gamma``.

    ``w~(eta) = w(h eta)`` is the source in rescaled time; ``w_gamma`` its
    transform on the real axis.  The norm runs over the space points held
    in ``values`` and ``|eta| < window`` (default ``T0 / 2``).
    """
    eta, _ = _eta_quadrature(times, cutoff)
    window = cutoff.T0 / 2 if window is None else window
    inside = np.abs(eta) < window
    if inside.sum() < MIN_SAMPLES // 4:
        raise ValueError("too few samples inside the evaluation window")
    d_eta = float(eta[1] - eta[0])
    vals = np.asarray(values, dtype=complex)
    target = vals[..., inside] * cutoff(eta[inside])
    _, wq = _eta_quadrature(times, cutoff)
    alive = np.flatnonzero(wq != 0)
    rows = np.flatnonzero(inside)
    # the grid is uniform, so F(eta_i - eta_j) depends only on i - j
    lo, hi = rows[0] - alive[-1], rows[-1] - alive[0]
    lag_index = rows[:, None] - alive[None, :] - lo
    src = vals[..., alive].reshape(-1, alive.size) * wq[alive]
    errs = []
    for g in gammas:
        lag = _kernel_values(d_eta * np.arange(lo, hi + 1).astype(complex), g, m)
        wg = (src @ lag[lag_index].T).reshape(target.shape)
        errs.append(float(math.sqrt((np.abs(target - wg) ** 2).sum() * d_eta)))
    errs = np.array(errs)
    slope = float(np.polyfit(np.log(gammas), np.log(errs), 1)[0]) if np.all(errs > 0) else float("nan")
    return {"gammas": np.asarray(gammas, float), "errors": errs, "slope": slope}


def transform_on_window(values: np.ndarray, times, gamma: float, m: int, cutoff: TimeCutoff,
                        window: float = None):
    """Real-axis transform ``w_gamma`` at the source nodes with ``|eta| < window`` (default ``T0 / 2``).

    Returns ``(eta, w_gamma)`` with ``w_gamma`` shaped ``values.shape[:-1] + eta.shape``.
    """
    eta, wq = _eta_quadrature(times, cutoff)
    window = cutoff.T0 / 2 if window is None else window
    rows = np.flatnonzero(np.abs(eta) < window)
    if rows.size == 0:
        raise ValueError("no source nodes inside the evaluation window")
    alive = np.flatnonzero(wq != 0)
    d_eta = float(eta[1] - eta[0])
    lo, hi = rows[0] - alive[-1], rows[-1] - alive[0]
    lag = _kernel_values(d_eta * np.arange(lo, hi + 1).astype(complex), gamma, m)
    vals = np.asarray(values, dtype=complex)
    src = vals[..., alive].reshape(-1, alive.size) * wq[alive]
    wg = src @ lag[rows[:, None] - alive[None, :] - lo].T
    return eta[rows], wg.reshape(vals.shape[:-1] + (rows.size,))


def cauchy_disc_average(values_at, kappas, eps: float, rectangle=(math.inf, 1.0),
                        n_radial: int = 16, n_angle: int = 64) -> list:
    """Mean-value check ``|w(k)|^2 <= (2 pi eps)^-1 int_0^eps int_0^2pi |w(k + r e^{i phi})|^2 d phi dr``.

    ``values_at(z)`` returns the transform at complex points ``z`` (last axes),
    with any leading space axes; the inequality is checked at every space
    point.  ``rectangle = (a, b)`` is the analyticity box ``|Re z| < a``,
    ``|Im z| < b``; every disc must lie inside it.  Radii use Gauss-Legendre
    nodes, angles the trapezoid rule.
    """
    re_half, im_half = rectangle
    if not eps > 0:
        raise ValueError("eps must be positive")
    for k in kappas:
        if abs(float(k)) + eps >= re_half or eps >= im_half:
            raise ValueError(f"disc of radius {eps} about {k} leaves the rectangle "
                             f"|Re z| < {re_half}, |Im z| < {im_half}")
    r, wr = np.polynomial.legendre.leggauss(n_radial)
    r = 0.5 * eps * (r + 1)
    wr = 0.5 * eps * wr
    phi = 2 * math.pi * np.arange(n_angle) / n_angle
    rows = []
    for k in kappas:
        ring = k + r[:, None] * np.exp(1j * phi)[None, :]
        vals = np.asarray(values_at(np.concatenate([[complex(k)], ring.ravel()])))
        centre = np.abs(vals[..., 0]) ** 2
        circ = np.abs(vals[..., 1:]).reshape(vals.shape[:-1] + ring.shape) ** 2
        avg = (circ.mean(axis=-1) * 2 * math.pi * wr).sum(axis=-1) / (2 * math.pi * eps)
        rows.append({"kappa": float(k), "lhs": centre, "rhs": avg,
                     "ok": bool(np.all(centre <= avg * (1 + 1e-10) + 1e-300))})
    return rows


def build_chi(weights) -> np.ndarray:
    """Cutoff on the cross-section lattice: 1 where ``psi0 >= beta0``, 0 where ``psi0 <= beta0 / 2``.

    Restricted to the outer collar and zero elsewhere; the transition band
    lies inside the sharp region of ``weights``.
    """
    sub = weights.psi0.subdomains
    cs = sub.cross_section
    psi = weights.psi0(cs.coords())
    b = weights.beta0
    s = (psi - b / 2) / (b / 2)
    a, c = _glue(s), _glue(1 - s)
    chi = np.where(sub.omega[0], a / (a + c), 0.0)
    return chi


def _check_chi(chi: np.ndarray, weights) -> None:
    sub = weights.psi0.subdomains
    outer = sub.omega[0]
    sharp = weights.omega_sharp
    if chi.shape != outer.shape:
        raise ValueError(f"chi shape {chi.shape} does not match the cross-section {outer.shape}")
    if np.any((chi < 0) | (chi > 1)):
        raise ValueError("chi must take values in [0, 1]")
    if np.any(chi[outer & ~sharp] != 1.0):
        raise ValueError("chi must equal 1 on the outer collar outside the sharp region")
    # the inner edge of the collar must fall where chi vanishes
    edge = outer & ndimage.binary_dilation(~outer & sub.cross_section.nodes)
    if np.any(chi[edge] != 0.0):
        raise ValueError("chi does not vanish on the inner edge of the outer collar")


def parabolic_residual(v: np.ndarray, times, grid, p1: np.ndarray, weights, gamma: float, m: int,
                       cutoff: TimeCutoff, t: float, tau, chi=None) -> dict:
    """Residual of ``L_h w_{gamma,t} = A + B`` for ``w = chi v`` on the outer collar.

    ``v`` has shape ``grid.shape + (len(times),)`` on uniform times covering
    ``[-T, T]``; ``L_h = h^-1 d_tau - Laplace + p1`` uses the solver's
    Dirichlet Laplacian and a centred difference in ``tau``, so the residual
    is reported on interior ``tau`` nodes.  ``A`` is minus the transform of
    ``[Laplace, chi] v`` and ``B = -i h^-1 int F(z - eta) theta'(eta) w d eta``.
    ``chi`` defaults to :func:`build_chi`; an all-ones ``chi`` is accepted.
    """
    if not -cutoff.T0 < t < cutoff.T0:
        raise ValueError(f"t = {t} lies outside (-T0, T0) = ({-cutoff.T0}, {cutoff.T0})")
    chi = build_chi(weights) if chi is None else np.asarray(chi, dtype=float)
    if not np.all(chi == 1.0):
        # chi = 1 everywhere is the commutator-free diagnostic
        _check_chi(chi, weights)
    tau = np.asarray(tau, dtype=float)
    dtau = np.diff(tau)
    if len(tau) < 3 or not np.allclose(dtau, dtau[0], rtol=1e-9, atol=0):
        raise ValueError("tau must be a uniform grid with at least three nodes")
    v = np.asarray(v, dtype=complex)
    unk = grid.unknowns
    v = v * unk[..., None]
    spac = grid.spacings
    chi_s = chi[..., None, None]
    w = chi_s * v
    comm = dirichlet_laplacian(w, spac) - chi_s * dirichlet_laplacian(v, spac)
    z = t - 1j * tau
    wg = fbi_at(w, times, gamma, m, cutoff, z)
    A = -fbi_at(comm, times, gamma, m, cutoff, z)
    B = -1j / cutoff.h * fbi_at(w, times, gamma, m, cutoff, z, profile=cutoff.derivative)
    lap = dirichlet_laplacian(wg, spac)
    dt_w = (wg[..., 2:] - wg[..., :-2]) / (2 * dtau[0])
    Lw = dt_w / cutoff.h + (-lap + p1[..., None] * wg)[..., 1:-1]
    mask = (unk & weights.psi0.subdomains.omega[0][..., None])[..., None]
    res = np.where(mask, Lw - A[..., 1:-1] - B[..., 1:-1], 0.0)
    vol = grid.cell_volume * dtau[0]

    def nrm(f):
        return float(math.sqrt((np.abs(np.where(mask, f, 0.0)) ** 2).sum() * vol))

    return {"residual": nrm(res), "norm_Lw": nrm(Lw), "norm_A": nrm(A[..., 1:-1]),
            "norm_B": nrm(B[..., 1:-1]), "A_max": float(np.abs(A).max())}
