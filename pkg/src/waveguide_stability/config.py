"""Experiment configuration: YAML text, defaults, validation and a stable hash.

A config may name another file under ``include``; the included mapping is
loaded first and the including file overrides it key by key.
"""
from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

import yaml

from .potentials import sobolev_order

__all__ = ["ConfigError", "ExperimentConfig", "DEFAULTS", "parse_config", "load_config"]

DEFAULTS = {
    "seed": 0,
    "geometry": {
        "shape": "disk",
        "params": 1.0,
        "spacing": 0.1,
        "R": 2.0,
        "axial_spacing": 0.1,
        "T": 0.5,
        "dt": 0.0025,
        "collars": [0.4, 0.3, 0.2, 0.1],
        "strip": [0.0, 1.5707963267948966],
    },
    "potential": {
        "b": 1.0,
        "d": 1.0,
        "M": 100.0,
        "background": None,
        "center": [0.0, 0.0],
        "width": 0.5,
        "amplitude": 0.1,
    },
    "initial": {"scale": 12.0, "kappa": 0.05, "d0": 0.5, "M_prime": 1.0e6},
    "weights": {"x0": [2.0, 0.0], "r": 2.0, "lambda": 0.05,
                "s_grid": [0.1, 0.3, 1.0, 3.0, 10.0]},
    "parabolic": {"lambda": 1.0, "a_w": None, "b_w": None, "lambda_scan": [1.0, 2.0, 4.0, 8.0],
                  "sigma_grid": [10.0, 17.8, 31.6, 56.2, 100.0], "h": 0.5},
    "fbi": {"gammas": [2.0, 4.0, 8.0, 16.0, 32.0], "m": None, "mu": 0.5, "T0": 1.0,
            "reduction_levels": [2, 4]},
    "sweep": {"amplitudes": [0.2, 0.1, 0.05, 0.025], "eps": 0.45, "delta": 0.5,
              "gamma0": 1.0},
}


class ConfigError(ValueError):
    """All violated constraints, one per line."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("\n".join(self.violations))


@dataclass(frozen=True)
class ExperimentConfig:
    data: dict

    def __getitem__(self, key):
        return self.data[key]

    @property
    def n(self) -> int:
        shape = self.data["geometry"]["shape"]
        return 2 if shape == "interval" else 3

    @property
    def N(self) -> int:
        return sobolev_order(self.n)

    @property
    def digest(self) -> str:
        text = json.dumps(self.data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in (over or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _positive(errs, section, cfg, *keys):
    for k in keys:
        v = cfg[section].get(k)
        if not isinstance(v, (int, float)) or not v > 0:
            errs.append(f"{section}.{k}: requires {k} > 0, got {v!r}")


def _validate(c: dict) -> list:
    errs = []
    g, pot, ini, w, par, fbi, sw = (c[k] for k in ("geometry", "potential", "initial", "weights",
                                                   "parabolic", "fbi", "sweep"))
    if g["shape"] not in ("interval", "rectangle", "disk"):
        errs.append(f"geometry.shape: expected interval, rectangle or disk, got {g['shape']!r}")
    _positive(errs, "geometry", c, "spacing", "R", "axial_spacing", "T", "dt")
    cw = g.get("collars") or []
    if len(cw) != 4 or not all(a > b for a, b in zip(cw, cw[1:])) or not cw[-1] > 0:
        errs.append(f"geometry.collars: requires w0 > w1 > w2 > w3 > 0, got {cw!r}")
    _positive(errs, "potential", c, "b", "d", "width")
    if not pot["M"] >= 0:
        errs.append(f"potential.M: requires M >= 0, got {pot['M']!r}")
    n = 2 if g["shape"] == "interval" else 3
    N = sobolev_order(n)
    d = pot["d"]
    if not ini["kappa"] > 0:
        errs.append(f"initial.kappa: requires kappa > 0, got {ini['kappa']!r}")
    if not 0 < ini["d0"] < 2 * d / 3:
        errs.append(f"initial.d0: requires 0 < d0 < 2d/3 = {2 * d / 3:.6g}, got {ini['d0']!r}")
    if not w["r"] > 1:
        errs.append(f"weights.r: requires r > 1, got {w['r']!r}")
    if not w["lambda"] > 0:
        errs.append(f"weights.lambda: requires lambda > 0, got {w['lambda']!r}")
    if not par["lambda"] > 0:
        errs.append(f"parabolic.lambda: requires lambda > 0, got {par['lambda']!r}")
    if not par["lambda_scan"] or any(not lv > 0 for lv in par["lambda_scan"]):
        errs.append(f"parabolic.lambda_scan: requires positive values, got {par['lambda_scan']!r}")
    a_w, b_w = par.get("a_w"), par.get("b_w")
    if (a_w is None) != (b_w is None):
        errs.append("parabolic.a_w/b_w: give both or neither")
    elif a_w is not None and not 0 < a_w < b_w < 2 * a_w:
        # sup psi0 > 0, so sup psi0 < a_w < b_w < 2 a_w - sup psi0 needs at least this
        errs.append(f"parabolic.a_w/b_w: requires 0 < a_w < b_w < 2 a_w - sup psi0, "
                    f"got a_w = {a_w!r}, b_w = {b_w!r}")
    if any(not gm > 1 for gm in fbi["gammas"]):
        errs.append(f"fbi.gammas: requires every gamma > 1, got {fbi['gammas']!r}")
    m = fbi.get("m")
    if m is not None and (int(m) != m or not 2 * m >= N):
        errs.append(f"fbi.m: requires an integer m with 2m >= N = {N}, got {m!r}")
    lv = fbi["reduction_levels"]
    if len(lv) < 2 or any(int(k) != k or k < 1 for k in lv) or sorted(lv) != list(lv):
        errs.append(f"fbi.reduction_levels: requires at least two increasing positive integers, got {lv!r}")
    if not 0 < fbi["mu"] < 1:
        errs.append(f"fbi.mu: requires 0 < mu < 1, got {fbi['mu']!r}")
    if isinstance(g["T"], (int, float)) and not fbi["T0"] > g["T"] / 3:
        errs.append(f"fbi.T0: requires T0 > T/3 = {g['T'] / 3:.6g}, got {fbi['T0']!r}")
    if not 0 < sw["eps"] < N / 2:
        errs.append(f"sweep.eps: requires 0 < eps < N/2 = {N / 2:.6g}, got {sw['eps']!r}")
    if not 0 < sw["delta"] < pot["b"]:
        errs.append(f"sweep.delta: requires 0 < delta < b = {pot['b']!r}, got {sw['delta']!r}")
    amps = sw["amplitudes"]
    if not amps or any(not (isinstance(a, (int, float)) and math.isfinite(a) and a >= 0)
                       for a in amps):
        errs.append(f"sweep.amplitudes: requires nonnegative finite amplitudes, got {amps!r}")
    return errs


def _read_with_includes(path: Path, seen=()) -> dict:
    path = path.resolve()
    if path in seen:
        raise ConfigError([f"include cycle through {path}"])
    raw = yaml.safe_load(path.read_text()) or {}
    inc = raw.pop("include", None)
    if inc is None:
        return raw
    return _merge(_read_with_includes(path.parent / inc, seen + (path,)), raw)


def parse_config(text: str, base_dir=None) -> ExperimentConfig:
    """Parse YAML text into a validated config; raises ConfigError listing every violation."""
    try:
        raw = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigError([f"malformed YAML: {exc}"]) from None
    if not isinstance(raw, dict):
        raise ConfigError(["top level must be a mapping"])
    inc = raw.pop("include", None)
    if inc is not None:
        raw = _merge(_read_with_includes(Path(base_dir or ".") / inc), raw)
    unknown = sorted(set(raw) - set(DEFAULTS))
    data = _merge(DEFAULTS, raw)
    errs = [f"{k}: unknown section" for k in unknown]
    try:
        errs += _validate(data)
    except (TypeError, KeyError) as exc:
        errs.append(f"malformed value: {exc}")
    if errs:
        raise ConfigError(errs)
    return ExperimentConfig(data)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    return parse_config(path.read_text(), base_dir=path.parent)
