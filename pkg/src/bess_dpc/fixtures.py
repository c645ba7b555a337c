"""Shipped scenarios: reference pack, the one-shot motivating case and the
power-intensive closed-loop sweep."""

from __future__ import annotations

from .circuit import CircuitParams, OcvCurve, reference_pack
from .forecast import ForecastSet
from .sim import Scenario, ServiceTrace, make_synthetic_service
from .soc import BessConfig

SWEEP_SOC0 = (0.1, 0.2, 0.3, 0.4, 0.5)
HIGH_SOC0 = (0.6, 0.7, 0.8, 0.9)
SERVICE_SEED = 1

# one-shot case: a single 600 kW discharge need two steps ahead
MOTIVATING_SOC0 = 0.2
MOTIVATING_NEED_KW = (0.0, 0.0, 600.0, 0.0, 0.0, 0.0)
# reference pack with R scaled so the voltage bound sits below 600 kW at SOC 0.2
MOTIVATING_RESISTANCE_OHM = 0.08


def motivating_bess() -> BessConfig:
    return BessConfig(energy_capacity_kwh=560.0, rated_power_kw=720.0, efficiency=1.0,
                      soc_min=0.05, soc_max=0.95, step_hours=5.0 / 60.0)


def motivating_forecast() -> ForecastSet:
    return ForecastSet.point(MOTIVATING_NEED_KW, motivating_bess().step_hours)


def motivating_pack() -> CircuitParams:
    return reference_pack(MOTIVATING_RESISTANCE_OHM)


def stress_pack() -> CircuitParams:
    """Pack whose voltage limit binds below SOC ~0.43 at 600 kW while its
    current limit never does; the two DPC variants then diverge."""
    return CircuitParams(
        ocv=OcvCurve.linear(620.0, 180.0),
        series_resistance_ohm=0.08,
        v_min_volt=620.0,
        v_max_volt=840.0,
        i_max_amp=1400.0,
    )


def stress_bess() -> BessConfig:
    return BessConfig(energy_capacity_kwh=500.0, rated_power_kw=720.0, efficiency=0.95,
                      soc_min=0.05, soc_max=0.95, step_hours=90.0 / 3600.0)


def stress_forecasts(horizon: int = 16, flipped: bool = False) -> ForecastSet:
    """Constant PIs: +-600 kW power and (-5.2, 4.1) kWh energy per 90 s step.

    ``flipped`` swaps the energy PI magnitudes for high-SOC starts.
    """
    w_lo, w_hi = (-4.1, 5.2) if flipped else (-5.2, 4.1)
    return ForecastSet.constant(-600.0, 600.0, w_lo, w_hi, horizon)


def stress_service(seed: int = SERVICE_SEED, duration_s: int = 7200, flipped: bool = False) -> ServiceTrace:
    """Alternating 225-450 kW bursts on top of a steady 100 kW drift."""
    drift = -100.0 if flipped else 100.0
    return make_synthetic_service(
        "mixed",
        {"duration_s": duration_s, "amplitude_kw": 450.0, "duty": 0.1, "mean_burst_s": 30.0,
         "segments": [(drift, duration_s / 3600.0)]},
        seed,
    )


def power_intensive_scenario(seed: int = SERVICE_SEED, duration_s: int = 7200) -> Scenario:
    return Scenario(stress_pack(), stress_bess(), stress_forecasts(), stress_service(seed, duration_s))


def high_soc_scenario(seed: int = SERVICE_SEED, duration_s: int = 7200) -> Scenario:
    """Mirror image for starts in 0.6-0.9: charging drift and flipped energy PIs."""
    return Scenario(stress_pack(), stress_bess(), stress_forecasts(flipped=True),
                    stress_service(seed, duration_s, flipped=True))
