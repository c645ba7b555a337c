"""State-of-charge bookkeeping with asymmetric charge/discharge efficiency."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class BessConfig:
    energy_capacity_kwh: float
    rated_power_kw: float
    efficiency: float = 0.95
    soc_min: float = 0.05
    soc_max: float = 0.95
    step_hours: float = 90.0 / 3600.0

    def __post_init__(self):
        if not self.energy_capacity_kwh > 0:
            raise ValueError("energy capacity must be > 0")
        if not self.rated_power_kw > 0:
            raise ValueError("rated power must be > 0")
        if not 0 < self.efficiency <= 1:
            raise ValueError("efficiency must lie in (0, 1]")
        if not 0 <= self.soc_min < self.soc_max <= 1:
            raise ValueError("SOC limits must satisfy 0 <= soc_min < soc_max <= 1")
        if not self.step_hours > 0:
            raise ValueError("step duration must be > 0")

    def with_step(self, step_hours: float) -> "BessConfig":
        return replace(self, step_hours=step_hours)


@dataclass(frozen=True)
class SocTrajectory:
    soc_lo: np.ndarray
    soc_hi: np.ndarray

    def __len__(self):
        return len(self.soc_lo)


def h_step(power_kw, config: BessConfig):
    """SOC decrement caused by holding ``power_kw`` for one step.

    Discharge (p > 0) is divided by the efficiency, charge is multiplied by it.
    """
    p = np.asarray(power_kw, dtype=float)
    eta = config.efficiency
    out = config.step_hours / config.energy_capacity_kwh * (np.maximum(p, 0.0) / eta + eta * np.minimum(p, 0.0))
    return float(out) if out.ndim == 0 else out


def soc_trajectory(soc0: float, powers_kw: Sequence[float], config: BessConfig) -> np.ndarray:
    """SOC at the start of every step plus the final value (no clamping)."""
    if not 0.0 <= soc0 <= 1.0:
        raise ValueError(f"initial SOC must lie in [0, 1], got {soc0}")
    deltas = h_step(np.asarray(powers_kw, dtype=float).reshape(-1), config)
    return soc0 - np.concatenate([[0.0], np.cumsum(deltas)])


def soc_pi_trajectories(
    soc0: float,
    energy_pi_lo_kwh: Sequence[float],
    energy_pi_hi_kwh: Sequence[float],
    offsets_kw: Sequence[float],
    config: BessConfig,
) -> SocTrajectory:
    """SOC prediction-interval bounds driven by energy PIs plus an offset profile.

    The upper energy PI (largest discharge) produces the lower SOC bound and
    vice versa.  Energies are per step and become average powers over it.
    """
    w_lo = np.asarray(energy_pi_lo_kwh, dtype=float)
    w_hi = np.asarray(energy_pi_hi_kwh, dtype=float)
    f = np.asarray(offsets_kw, dtype=float)
    if not (w_lo.shape == w_hi.shape == f.shape) or w_lo.ndim != 1:
        raise ValueError(
            f"energy PIs and offsets must be 1-D with equal length, got {w_lo.shape}, {w_hi.shape}, {f.shape}"
        )
    dt = config.step_hours
    return SocTrajectory(
        soc_lo=soc_trajectory(soc0, w_hi / dt + f, config),
        soc_hi=soc_trajectory(soc0, w_lo / dt + f, config),
    )
