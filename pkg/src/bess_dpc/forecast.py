"""Empirical power and energy prediction intervals from a 1 Hz power history."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

MIN_POWER_SAMPLES = 100


class ForecastError(ValueError):
    pass


@dataclass(frozen=True)
class ForecastSet:
    """Per-step power PIs (kW) and energy PIs (kWh per step)."""

    p_lo_kw: np.ndarray
    p_hi_kw: np.ndarray
    w_lo_kwh: np.ndarray
    w_hi_kwh: np.ndarray

    def __post_init__(self):
        arrays = [np.asarray(a, dtype=float).reshape(-1) for a in
                  (self.p_lo_kw, self.p_hi_kw, self.w_lo_kwh, self.w_hi_kwh)]
        if len({a.size for a in arrays}) != 1:
            raise ForecastError("all forecast sequences must have the same length")
        for name, a in zip(("p_lo_kw", "p_hi_kw", "w_lo_kwh", "w_hi_kwh"), arrays):
            object.__setattr__(self, name, a)
        if np.any(arrays[0] > arrays[1]) or np.any(arrays[2] > arrays[3]):
            raise ForecastError("lower PI exceeds upper PI")

    @property
    def horizon(self) -> int:
        return self.p_lo_kw.size

    @classmethod
    def constant(cls, p_lo_kw, p_hi_kw, w_lo_kwh, w_hi_kwh, horizon: int) -> "ForecastSet":
        full = lambda v: np.full(horizon, float(v))  # noqa: E731
        return cls(full(p_lo_kw), full(p_hi_kw), full(w_lo_kwh), full(w_hi_kwh))

    @classmethod
    def point(cls, powers_kw: Sequence[float], step_hours: float) -> "ForecastSet":
        """Degenerate PIs from a point forecast; energies are power times step."""
        p = np.asarray(powers_kw, dtype=float)
        return cls(p.copy(), p.copy(), p * step_hours, p * step_hours)

    def head(self, horizon: int) -> "ForecastSet":
        return ForecastSet(self.p_lo_kw[:horizon], self.p_hi_kw[:horizon],
                           self.w_lo_kwh[:horizon], self.w_hi_kwh[:horizon])

    def energy_within_power(self, step_hours: float, tol: float = 1e-9) -> bool:
        """Energy PIs, as average power, must not exceed the power PIs in magnitude."""
        cap = np.maximum(np.abs(self.p_hi_kw), np.abs(self.p_lo_kw))
        w = np.maximum(np.abs(self.w_hi_kwh), np.abs(self.w_lo_kwh)) / step_hours
        return bool(np.all(w <= cap + tol))


def empirical_quantile(data: Sequence[float], q: float) -> float:
    """Linear interpolation between order statistics at position (n-1)*q."""
    x = np.asarray(data, dtype=float)
    if x.size == 0:
        raise ForecastError("cannot take a quantile of empty data")
    if not 0.0 <= q <= 1.0:
        raise ForecastError(f"quantile level must lie in [0, 1], got {q}")
    return float(np.quantile(x, q, method="linear"))


def estimate_power_pis(series_kw: Sequence[float], q_lo: float, q_hi: float, horizon: int):
    x = np.asarray(series_kw, dtype=float)
    if x.size < MIN_POWER_SAMPLES:
        raise ForecastError(f"need at least {MIN_POWER_SAMPLES} samples, got {x.size}")
    lo, hi = empirical_quantile(x, q_lo), empirical_quantile(x, q_hi)
    return np.full(horizon, lo), np.full(horizon, hi)


def block_energies(series_kw: Sequence[float], resample_s: int) -> np.ndarray:
    """Mean power of each full ``resample_s`` block times its duration, in kWh."""
    x = np.asarray(series_kw, dtype=float)
    n_blocks = x.size // resample_s
    if n_blocks == 0:
        raise ForecastError(f"series of {x.size} s is shorter than one {resample_s} s block")
    means = x[: n_blocks * resample_s].reshape(n_blocks, resample_s).mean(axis=1)
    return means * (resample_s / 3600.0)


def estimate_energy_pis(series_kw: Sequence[float], resample_s: int, q_lo: float, q_hi: float, horizon: int):
    energies = block_energies(series_kw, resample_s)
    lo, hi = empirical_quantile(energies, q_lo), empirical_quantile(energies, q_hi)
    return np.full(horizon, lo), np.full(horizon, hi)


def estimate_forecast_set(
    series_kw: Sequence[float],
    horizon: int,
    resample_s: int = 90,
    q_lo: float = 0.05,
    q_hi: float = 0.95,
) -> ForecastSet:
    p_lo, p_hi = estimate_power_pis(series_kw, q_lo, q_hi, horizon)
    w_lo, w_hi = estimate_energy_pis(series_kw, resample_s, q_lo, q_hi, horizon)
    return ForecastSet(p_lo, p_hi, w_lo, w_hi)


def read_power_trace_csv(path: str | Path) -> np.ndarray:
    """Read a ``t_s,power_kw`` trace sampled at 1 Hz; gaps are rejected."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"t_s", "power_kw"} <= set(reader.fieldnames):
            raise ForecastError(f"{path}: expected header 't_s,power_kw'")
        rows = [(float(r["t_s"]), float(r["power_kw"])) for r in reader]
    if not rows:
        raise ForecastError(f"{path}: empty trace")
    t = np.array([r[0] for r in rows])
    if np.any(np.abs(np.diff(t) - 1.0) > 1e-9):
        bad = int(np.argmax(np.abs(np.diff(t) - 1.0) > 1e-9))
        raise ForecastError(f"{path}: trace is not uniform 1 Hz near t={t[bad]:g} s")
    p = np.array([r[1] for r in rows])
    if not np.all(np.isfinite(p)):
        raise ForecastError(f"{path}: non-finite power values")
    return p


def write_power_trace_csv(path: str | Path, power_kw: Sequence[float]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t_s", "power_kw"])
        for t, p in enumerate(np.asarray(power_kw, dtype=float)):
            w.writerow([t, repr(float(p))])


FORECAST_COLUMNS = ("step", "p_lo_kw", "p_hi_kw", "w_lo_kwh", "w_hi_kwh")


def write_forecast_csv(path: str | Path, fc: ForecastSet) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FORECAST_COLUMNS)
        for t in range(fc.horizon):
            w.writerow([t] + [repr(float(a[t])) for a in (fc.p_lo_kw, fc.p_hi_kw, fc.w_lo_kwh, fc.w_hi_kwh)])


def read_forecast_csv(path: str | Path) -> ForecastSet:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not set(FORECAST_COLUMNS[1:]) <= set(reader.fieldnames):
            raise ForecastError(f"{path}: expected header {','.join(FORECAST_COLUMNS)}")
        rows = list(reader)
    if not rows:
        raise ForecastError(f"{path}: no forecast steps")
    cols = [np.array([float(r[c]) for r in rows]) for c in FORECAST_COLUMNS[1:]]
    return ForecastSet(*cols)
