"""Steady-state equivalent circuit of a battery pack.

The pack is an open-circuit voltage source ``v_oc(SOC)`` in series with a
resistance ``R``.  Currents are discharge-positive, powers are in kW at the
DC terminals, voltages in V and SOC is a fraction in [0, 1].

Every function accepts scalars or numpy arrays for ``soc`` / power / current
and returns the same shape.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

W_PER_KW = 1000.0


class CircuitError(ValueError):
    pass


class OcvFitError(CircuitError):
    pass


class SocDomainError(CircuitError):
    pass


class InfeasiblePowerError(CircuitError):
    """Requested power is beyond the apex of the p(i) parabola."""


class EmptyPowerIntervalError(CircuitError):
    pass


@dataclass(frozen=True)
class OcvCurve:
    """Tabulated OCV samples plus the linear fit used by the scheduler."""

    socs: tuple[float, ...]
    voltages: tuple[float, ...]
    intercept: float
    slope: float
    fit_range: tuple[float, float] = (0.0, 1.0)
    max_residual: float = 0.0
    warnings: tuple[str, ...] = ()

    @classmethod
    def linear(cls, intercept: float, slope: float, n: int = 11) -> "OcvCurve":
        socs = tuple(float(s) for s in np.linspace(0.0, 1.0, n))
        return cls(socs, tuple(intercept + slope * s for s in socs), float(intercept), float(slope))

    def extrapolates(self, soc: float) -> bool:
        lo, hi = self.fit_range
        return soc < lo or soc > hi

    def table(self, soc):
        """Piecewise-linear interpolation of the raw samples (plant oracle)."""
        s = np.asarray(soc, dtype=float)
        xs = np.asarray(self.socs)
        ys = np.asarray(self.voltages)
        v = np.interp(s, xs, ys)
        # np.interp clamps; continue the end segments linearly instead
        lo_slope = (ys[1] - ys[0]) / (xs[1] - xs[0])
        hi_slope = (ys[-1] - ys[-2]) / (xs[-1] - xs[-2])
        v = np.where(s < xs[0], ys[0] + lo_slope * (s - xs[0]), v)
        v = np.where(s > xs[-1], ys[-1] + hi_slope * (s - xs[-1]), v)
        return v if v.ndim else float(v)


def fit_ocv(
    samples: Sequence[tuple[float, float]],
    fit_range: tuple[float, float] = (0.0, 1.0),
    residual_tol: float | None = None,
) -> OcvCurve:
    """Least-squares line through the samples that fall inside ``fit_range``.

    Problems that do not prevent a fit (non-monotone table, non-positive
    slope, residual above ``residual_tol``) are reported in ``warnings``.
    """
    socs = np.array([float(s) for s, _ in samples])
    volts = np.array([float(v) for _, v in samples])
    if socs.size and np.any(np.diff(socs) <= 0):
        raise OcvFitError("OCV samples must be sorted strictly increasing in SOC")
    lo, hi = fit_range
    mask = (socs >= lo) & (socs <= hi)
    if mask.sum() < 2:
        raise OcvFitError(f"need at least 2 samples inside fit range {fit_range}, got {int(mask.sum())}")

    x, y = socs[mask], volts[mask]
    design = np.column_stack([np.ones_like(x), x])
    (intercept, slope), *_ = np.linalg.lstsq(design, y, rcond=None)
    residual = float(np.max(np.abs(design @ np.array([intercept, slope]) - y)))

    warns = []
    if np.any(np.diff(volts) < 0):
        warns.append("voltages are not non-decreasing in SOC")
    # lstsq leaves ~1e-14 of noise on a flat table
    if not slope > 1e-9 * max(1.0, abs(intercept)):
        warns.append(f"fit slope {slope:g} V is not > 0")
    if residual_tol is not None and residual > residual_tol:
        warns.append(f"fit residual {residual:g} V exceeds tolerance {residual_tol:g} V")

    return OcvCurve(
        socs=tuple(socs.tolist()),
        voltages=tuple(volts.tolist()),
        intercept=float(intercept),
        slope=float(slope),
        fit_range=(float(lo), float(hi)),
        max_residual=residual,
        warnings=tuple(warns),
    )


def read_ocv_csv(path: str | Path) -> list[tuple[float, float]]:
    """Read ``soc,voltage_v`` rows (header required)."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"soc", "voltage_v"} <= set(reader.fieldnames):
            raise CircuitError(f"{path}: expected header 'soc,voltage_v'")
        return [(float(row["soc"]), float(row["voltage_v"])) for row in reader]


def write_ocv_csv(path: str | Path, samples: Sequence[tuple[float, float]]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["soc", "voltage_v"])
        for soc, v in samples:
            writer.writerow([repr(float(soc)), repr(float(v))])


@dataclass(frozen=True)
class CircuitParams:
    ocv: OcvCurve
    series_resistance_ohm: float
    v_min_volt: float
    v_max_volt: float
    i_max_amp: float

    def __post_init__(self):
        if not self.series_resistance_ohm > 0:
            raise CircuitError("series resistance must be > 0")
        if not 0 < self.v_min_volt < self.v_max_volt:
            raise CircuitError("voltage limits must satisfy 0 < v_min < v_max")
        if not self.i_max_amp > 0:
            raise CircuitError("rated current must be > 0")


@dataclass(frozen=True)
class PowerBounds:
    p_lo_kw: float | np.ndarray
    p_hi_kw: float | np.ndarray

    @property
    def degenerate(self) -> bool:
        """True where the interval does not contain zero (v_oc outside the voltage window)."""
        return bool(np.any(np.asarray(self.p_hi_kw) < 0) or np.any(np.asarray(self.p_lo_kw) > 0))


@dataclass(frozen=True)
class MptReport:
    ok: bool
    worst_soc: float
    worst_i_max_amp: float
    margin_amp: float


def _check_soc(soc):
    s = np.asarray(soc, dtype=float)
    if np.any(s < 0.0) or np.any(s > 1.0) or np.any(~np.isfinite(s)):
        raise SocDomainError(f"SOC must lie in [0, 1], got {soc!r}")
    return s


def _scalar(x):
    return float(x) if np.ndim(x) == 0 else x


def ocv_at(curve: OcvCurve, soc):
    """Linear-fit OCV; SOC outside the fit range is extrapolated (see ``curve.extrapolates``)."""
    s = _check_soc(soc)
    return _scalar(curve.intercept + curve.slope * s)


def open_circuit_voltage(params: CircuitParams, soc, source: str = "fit"):
    if source == "fit":
        return ocv_at(params.ocv, soc)
    if source == "table":
        _check_soc(soc)
        return params.ocv.table(soc)
    raise ValueError(f"unknown OCV source {source!r}")


def check_mpt_assumption(params: CircuitParams) -> MptReport:
    """Rated current must stay below the maximum-power-transfer current v_oc/(2R)."""
    lo, hi = params.ocv.fit_range
    grid = np.linspace(lo, hi, 201)
    i_mpt = np.asarray(ocv_at(params.ocv, grid)) / (2.0 * params.series_resistance_ohm)
    k = int(np.argmin(i_mpt))
    worst = float(i_mpt[k])
    return MptReport(
        ok=params.i_max_amp < worst,
        worst_soc=float(grid[k]),
        worst_i_max_amp=worst,
        margin_amp=worst - params.i_max_amp,
    )


def power_bounds_voltage(params: CircuitParams, soc, source: str = "fit") -> PowerBounds:
    voc = np.asarray(open_circuit_voltage(params, soc, source))
    r = params.series_resistance_ohm
    hi = params.v_min_volt / r * (voc - params.v_min_volt) / W_PER_KW
    lo = params.v_max_volt / r * (voc - params.v_max_volt) / W_PER_KW
    return PowerBounds(_scalar(lo), _scalar(hi))


def power_bounds_current(params: CircuitParams, soc, source: str = "fit") -> PowerBounds:
    voc = np.asarray(open_circuit_voltage(params, soc, source))
    i, r = params.i_max_amp, params.series_resistance_ohm
    hi = (voc * i - r * i * i) / W_PER_KW
    lo = (-voc * i - r * i * i) / W_PER_KW
    return PowerBounds(_scalar(lo), _scalar(hi))


def feasible_power(params: CircuitParams, soc, source: str = "fit", include_voltage: bool = True) -> PowerBounds:
    cur = power_bounds_current(params, soc, source)
    if not include_voltage:
        return cur
    vol = power_bounds_voltage(params, soc, source)
    lo = np.maximum(vol.p_lo_kw, cur.p_lo_kw)
    hi = np.minimum(vol.p_hi_kw, cur.p_hi_kw)
    if np.any(lo > hi):
        raise EmptyPowerIntervalError(f"empty feasible power interval at SOC {soc!r}")
    return PowerBounds(_scalar(lo), _scalar(hi))


def current_from_power(params: CircuitParams, soc, power_kw, source: str = "fit"):
    """Invert p = v_oc*i - R*i^2 on the branch i <= v_oc/(2R)."""
    voc = np.asarray(open_circuit_voltage(params, soc, source))
    r = params.series_resistance_ohm
    p_w = np.asarray(power_kw, dtype=float) * W_PER_KW
    disc = voc * voc - 4.0 * r * p_w
    if np.any(disc < 0):
        raise InfeasiblePowerError(f"power {power_kw!r} kW exceeds the transferable maximum")
    # 2p / (v + sqrt(disc)) is the small root without cancellation
    i = 2.0 * p_w / (voc + np.sqrt(disc))
    return _scalar(i)


def saturated_current(params: CircuitParams, soc, power_kw, source: str = "fit"):
    """Like ``current_from_power`` but clamps to the parabola apex instead of raising.

    Returns ``(current, saturated_mask)``.
    """
    voc = np.asarray(open_circuit_voltage(params, soc, source), dtype=float)
    r = params.series_resistance_ohm
    p_w = np.asarray(power_kw, dtype=float) * W_PER_KW
    disc = voc * voc - 4.0 * r * p_w
    sat = disc < 0
    i = 2.0 * p_w / (voc + np.sqrt(np.maximum(disc, 0.0)))
    i = np.where(sat, voc / (2.0 * r), i)
    return _scalar(i), sat


def terminal_voltage(params: CircuitParams, soc, current_amp, source: str = "fit"):
    voc = np.asarray(open_circuit_voltage(params, soc, source))
    return _scalar(voc - params.series_resistance_ohm * np.asarray(current_amp, dtype=float))


def current_limits(params: CircuitParams, soc, source: str = "fit", include_voltage: bool = True):
    """SOC-dependent current window ``(i_lo, i_hi)`` equivalent to ``feasible_power``."""
    b = feasible_power(params, soc, source, include_voltage)
    return (
        current_from_power(params, soc, b.p_lo_kw, source),
        current_from_power(params, soc, b.p_hi_kw, source),
    )


def reference_pack(resistance_ohm: float = 0.05) -> CircuitParams:
    """Synthetic 620-800 V pack used as the canonical fixture."""
    return CircuitParams(
        ocv=OcvCurve.linear(620.0, 180.0),
        series_resistance_ohm=resistance_ohm,
        v_min_volt=580.0,
        v_max_volt=840.0,
        i_max_amp=1000.0,
    )
