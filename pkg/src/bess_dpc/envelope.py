"""Piecewise-linear SOC-dependent power envelope.

The discharge limit is the pointwise minimum of K affine functions of SOC and
the charge limit the pointwise maximum of J affine functions, so the feasible
(SOC, power) region is convex by construction.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .circuit import CircuitParams, PowerBounds, W_PER_KW, feasible_power

Line = tuple[float, float]  # (intercept kW, slope kW per unit SOC)


class EnvelopeError(ValueError):
    pass


class EnvelopeFitError(EnvelopeError):
    def __init__(self, message: str, achieved_kw: float):
        super().__init__(message)
        self.achieved_kw = achieved_kw


@dataclass(frozen=True)
class PowerEnvelope:
    upper: tuple[Line, ...]
    lower: tuple[Line, ...]
    soc_domain: tuple[float, float] = (0.05, 0.95)
    fit_error_kw: float = 0.0

    def __post_init__(self):
        if not self.upper or not self.lower:
            raise EnvelopeError("envelope needs at least one line per side")
        object.__setattr__(self, "upper", tuple((float(a), float(b)) for a, b in self.upper))
        object.__setattr__(self, "lower", tuple((float(a), float(b)) for a, b in self.lower))

    def upper_at(self, soc):
        s = np.asarray(soc, dtype=float)
        v = np.min([a + b * s for a, b in self.upper], axis=0)
        return float(v) if v.ndim == 0 else v

    def lower_at(self, soc):
        s = np.asarray(soc, dtype=float)
        v = np.max([a + b * s for a, b in self.lower], axis=0)
        return float(v) if v.ndim == 0 else v

    @property
    def max_discharge_kw(self) -> float:
        lo, hi = self.soc_domain
        return float(np.max(self.upper_at(np.linspace(lo, hi, 1001))))

    @property
    def max_charge_kw(self) -> float:
        lo, hi = self.soc_domain
        return float(-np.min(self.lower_at(np.linspace(lo, hi, 1001))))


def bounds_at(envelope: PowerEnvelope, soc) -> PowerBounds:
    lo, hi = envelope.soc_domain
    s = np.asarray(soc, dtype=float)
    if np.any(s < lo - 1e-12) or np.any(s > hi + 1e-12):
        raise EnvelopeError(f"SOC {soc!r} outside envelope domain {envelope.soc_domain}")
    return PowerBounds(envelope.lower_at(s), envelope.upper_at(s))


def _analytic_lines(params: CircuitParams, include_voltage: bool) -> tuple[list[Line], list[Line]]:
    """Exact bound lines when the OCV is the linear fit c0 + c1*SOC."""
    c0, c1 = params.ocv.intercept, params.ocv.slope
    r, i = params.series_resistance_ohm, params.i_max_amp
    upper = [((c0 * i - r * i * i) / W_PER_KW, c1 * i / W_PER_KW)]
    lower = [((-c0 * i - r * i * i) / W_PER_KW, -c1 * i / W_PER_KW)]
    if include_voltage:
        vlo, vhi = params.v_min_volt, params.v_max_volt
        upper.insert(0, (vlo * (c0 - vlo) / (r * W_PER_KW), vlo * c1 / (r * W_PER_KW)))
        lower.insert(0, (vhi * (c0 - vhi) / (r * W_PER_KW), vhi * c1 / (r * W_PER_KW)))
    return upper, lower


def _conservative_line(s: np.ndarray, y: np.ndarray) -> Line:
    """Least-squares line shifted down until it lies on or below every sample."""
    if s.size == 1:
        return float(y[0]), 0.0
    b, a = np.polyfit(s, y, 1)
    a -= max(0.0, float(np.max(a + b * s - y)))
    return float(a), float(b)


def _min_lines(lines: Sequence[Line], s: np.ndarray) -> np.ndarray:
    return np.min([a + b * s for a, b in lines], axis=0)


def fit_concave_lines(s: np.ndarray, y: np.ndarray, count: int) -> tuple[list[Line], float]:
    """Greedy segment splitting: approximate samples of a concave curve from below.

    Each segment gets a conservative least-squares line; the split that most
    reduces the worst-case gap is applied until ``count`` lines exist.
    """
    segments = [(0, s.size)]
    lines = [_conservative_line(s, y)]
    err = float(np.max(y - _min_lines(lines, s)))
    while len(lines) < count and err > 1e-12:
        best = None
        for k, (lo, hi) in enumerate(segments):
            for cut in range(lo + 1, hi):
                left = _conservative_line(s[lo:cut], y[lo:cut])
                right = _conservative_line(s[cut:hi], y[cut:hi])
                trial = lines[:k] + [left, right] + lines[k + 1:]
                e = float(np.max(y - _min_lines(trial, s)))
                if best is None or e < best[0] - 1e-12:
                    best = (e, k, cut, left, right)
        if best is None:
            break
        e, k, cut, left, right = best
        lo, hi = segments[k]
        segments[k:k + 1] = [(lo, cut), (cut, hi)]
        lines[k:k + 1] = [left, right]
        err = e
    return lines, max(err, 0.0)


def build_envelope(
    params: CircuitParams,
    k_upper: int = 2,
    j_lower: int = 2,
    include_voltage: bool = True,
    sample_count: int = 101,
    soc_domain: tuple[float, float] = (0.05, 0.95),
    ocv_source: str = "fit",
    max_error_kw: float = 25.0,
) -> PowerEnvelope:
    """Fit the feasible-power region of ``params`` with K upper and J lower lines.

    With the linear OCV fit the exact bounds are themselves minima/maxima of at
    most two affine functions, which are returned directly when the requested
    counts allow it.  Otherwise, or for tabulated OCV, the sampled exact bounds
    are approximated from inside by ``fit_concave_lines``.
    """
    if k_upper < 1 or j_lower < 1:
        raise EnvelopeError("need at least one line per side")
    if sample_count < 11:
        raise EnvelopeError("sample_count must be >= 11")
    lo, hi = soc_domain
    s = np.linspace(lo, hi, sample_count)
    exact = feasible_power(params, s, source=ocv_source, include_voltage=include_voltage)
    y_hi, y_lo = np.asarray(exact.p_hi_kw), np.asarray(exact.p_lo_kw)

    upper = lower = None
    if ocv_source == "fit":
        cand_hi, cand_lo = _analytic_lines(params, include_voltage)
        if len(cand_hi) <= k_upper:
            upper = cand_hi
        if len(cand_lo) <= j_lower:
            lower = cand_lo
    if upper is None:
        upper, _ = fit_concave_lines(s, y_hi, k_upper)
    if lower is None:
        neg, _ = fit_concave_lines(s, -y_lo, j_lower)
        lower = [(-a, -b) for a, b in neg]

    env = PowerEnvelope(tuple(upper), tuple(lower), (float(lo), float(hi)))
    err = float(max(np.max(np.abs(y_hi - env.upper_at(s))), np.max(np.abs(y_lo - env.lower_at(s)))))
    if err > max_error_kw:
        raise EnvelopeFitError(
            f"{k_upper}/{j_lower} lines reach {err:.3f} kW, above the {max_error_kw} kW cap", err
        )
    return PowerEnvelope(env.upper, env.lower, env.soc_domain, err)


def _midpoint_ok(fn: Callable, a: np.ndarray, b: np.ndarray, concave: bool, tol: float) -> bool:
    mid = fn((a + b) / 2.0)
    avg = (fn(a) + fn(b)) / 2.0
    return bool(np.all(mid >= avg - tol)) if concave else bool(np.all(mid <= avg + tol))


def verify_convexity(
    envelope: PowerEnvelope,
    n_pairs: int = 1000,
    seed: int = 0,
    tol: float = 1e-9,
) -> bool:
    """Midpoint test: upper boundary concave and lower boundary convex.

    Pairs come from a dense grid plus ``n_pairs`` random draws over the domain.
    """
    lo, hi = envelope.soc_domain
    grid = np.linspace(lo, hi, 201)
    ga, gb = np.meshgrid(grid, grid)
    rng = np.random.default_rng(seed)
    ra, rb = rng.uniform(lo, hi, size=(2, n_pairs))
    a = np.concatenate([ga.ravel(), ra])
    b = np.concatenate([gb.ravel(), rb])
    scale = max(1.0, float(np.max(np.abs(envelope.upper_at(grid)))), float(np.max(np.abs(envelope.lower_at(grid)))))
    t = tol * scale
    return _midpoint_ok(envelope.upper_at, a, b, True, t) and _midpoint_ok(envelope.lower_at, a, b, False, t)


def write_envelope_csv(path: str | Path, envelope: PowerEnvelope) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["side", "a_kw", "b_kw_per_soc"])
        for side, lines in (("upper", envelope.upper), ("lower", envelope.lower)):
            for a, b in lines:
                w.writerow([side, repr(a), repr(b)])


def read_envelope_csv(path: str | Path, soc_domain: tuple[float, float] = (0.05, 0.95)) -> PowerEnvelope:
    upper, lower = [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"side", "a_kw", "b_kw_per_soc"} <= set(reader.fieldnames):
            raise EnvelopeError(f"{path}: expected header 'side,a_kw,b_kw_per_soc'")
        for row in reader:
            line = (float(row["a_kw"]), float(row["b_kw_per_soc"]))
            if row["side"] == "upper":
                upper.append(line)
            elif row["side"] == "lower":
                lower.append(line)
            else:
                raise EnvelopeError(f"{path}: unknown side {row['side']!r}")
    return PowerEnvelope(tuple(upper), tuple(lower), soc_domain)


def write_boundary_csv(path: str | Path, socs: Sequence[float], bounds: PowerBounds) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["soc", "p_lo_kw", "p_hi_kw"])
        for s, lo, hi in zip(socs, np.asarray(bounds.p_lo_kw), np.asarray(bounds.p_hi_kw)):
            w.writerow([repr(float(s)), repr(float(lo)), repr(float(hi))])


def read_boundary_csv(path: str | Path) -> tuple[np.ndarray, PowerBounds]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    s = np.array([float(r["soc"]) for r in rows])
    return s, PowerBounds(np.array([float(r["p_lo_kw"]) for r in rows]),
                          np.array([float(r["p_hi_kw"]) for r in rows]))
