"""YAML scenario documents.

Every quantity carries its unit in the key name.  Relative file paths are
resolved against the directory of the document that mentions them.  See
``configs/`` in the repository for complete examples and README for the
schema.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .circuit import CircuitError, CircuitParams, OcvCurve, fit_ocv, read_ocv_csv
from .forecast import ForecastError, ForecastSet, estimate_forecast_set, read_forecast_csv, read_power_trace_csv
from .scheduler import Mode
from .sim import Scenario, ServiceTrace, SimulationError, make_synthetic_service, read_service_csv
from .soc import BessConfig


class ConfigError(ValueError):
    """Bad or incomplete scenario document; the message names the offending key or file."""


_SYNTHETIC_KEYS = {"kind", "seed", "duration_s", "amplitude_kw", "duty", "mean_burst_s", "segments", "truncate"}


@dataclass
class ScenarioConfig:
    circuit: CircuitParams
    bess: BessConfig
    mode: Mode
    horizon: int
    soft_constraints: bool
    soc0: float
    forecasts: ForecastSet | None
    service: ServiceTrace | None
    service_trace_path: Path | None = None
    envelope: dict = field(default_factory=dict)
    period_s: int = 90
    plant_ocv: str = "fit"
    oracle_r_multiplier: float = 1.0
    sweep_soc0: tuple[float, ...] = (0.1, 0.2, 0.3, 0.4, 0.5)
    workers: int = 1
    forecast_estimation: dict = field(default_factory=dict)

    def scenario(self) -> Scenario:
        if self.forecasts is None:
            raise ConfigError("forecast: section is required for closed-loop runs")
        if self.service is None:
            raise ConfigError("service: section is required for closed-loop runs")
        return Scenario(self.circuit, self.bess, self.forecasts, self.service, self.horizon, self.period_s,
                        self.soft_constraints, self.plant_ocv, self.oracle_r_multiplier)


def _section(doc: dict, name: str, required: bool = True) -> dict:
    sec = doc.get(name)
    if sec is None:
        if required:
            raise ConfigError(f"missing section '{name}'")
        return {}
    if not isinstance(sec, dict):
        raise ConfigError(f"section '{name}' must be a mapping")
    return sec


def _num(sec: dict, where: str, key: str, default: Any = None, kind=float):
    if key not in sec:
        if default is None:
            raise ConfigError(f"missing key '{where}.{key}'")
        return default
    try:
        return kind(sec[key])
    except (TypeError, ValueError):
        raise ConfigError(f"'{where}.{key}' must be {kind.__name__}, got {sec[key]!r}") from None


def _path(base: Path, value: Any, where: str) -> Path:
    p = Path(str(value))
    if not p.is_absolute():
        p = base / p
    if not p.is_file():
        raise ConfigError(f"{where}: file not found: {p}")
    return p


def load_yaml(path: Path) -> dict:
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return doc


def parse_circuit(sec: dict, base: Path) -> CircuitParams:
    if "file" in sec:
        p = _path(base, sec["file"], "circuit.file")
        inner = load_yaml(p)
        merged = dict(inner.get("circuit", inner))
        merged.update({k: v for k, v in sec.items() if k != "file"})
        return parse_circuit(merged, p.parent)
    if "ocv_csv" in sec:
        p = _path(base, sec["ocv_csv"], "circuit.ocv_csv")
        rng = sec.get("ocv_fit_range", [0.0, 1.0])
        try:
            ocv = fit_ocv(read_ocv_csv(p), (float(rng[0]), float(rng[1])))
        except CircuitError as exc:
            raise ConfigError(f"circuit.ocv_csv: {exc}") from None
    else:
        ocv = OcvCurve.linear(_num(sec, "circuit", "ocv_intercept_v"), _num(sec, "circuit", "ocv_slope_v_per_soc"))
    try:
        return CircuitParams(
            ocv=ocv,
            series_resistance_ohm=_num(sec, "circuit", "series_resistance_ohm"),
            v_min_volt=_num(sec, "circuit", "v_min_volt"),
            v_max_volt=_num(sec, "circuit", "v_max_volt"),
            i_max_amp=_num(sec, "circuit", "i_max_amp"),
        )
    except CircuitError as exc:
        raise ConfigError(f"circuit: {exc}") from None


def parse_bess(sec: dict) -> BessConfig:
    try:
        return BessConfig(
            energy_capacity_kwh=_num(sec, "bess", "energy_capacity_kwh"),
            rated_power_kw=_num(sec, "bess", "rated_power_kw"),
            efficiency=_num(sec, "bess", "efficiency", 0.95),
            soc_min=_num(sec, "bess", "soc_min", 0.05),
            soc_max=_num(sec, "bess", "soc_max", 0.95),
            step_hours=_num(sec, "bess", "step_s", 90.0) / 3600.0,
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bess: {exc}") from None


def parse_service(sec: dict, base: Path, seed: int | None) -> tuple[ServiceTrace | None, Path | None]:
    if not sec:
        return None, None
    sources = [k for k in ("file", "synthetic") if k in sec]
    if len(sources) != 1:
        raise ConfigError("service: give exactly one of 'file' or 'synthetic'")
    try:
        if sources[0] == "file":
            p = _path(base, sec["file"], "service.file")
            return read_service_csv(p), p
        syn = sec["synthetic"]
        if not isinstance(syn, dict):
            raise ConfigError("service.synthetic must be a mapping")
        unknown = set(syn) - _SYNTHETIC_KEYS
        if unknown:
            raise ConfigError(f"service.synthetic: unknown keys {sorted(unknown)}")
        params = {k: v for k, v in syn.items() if k not in ("kind", "seed")}
        use_seed = int(seed if seed is not None else syn.get("seed", 0))
        return make_synthetic_service(str(syn.get("kind", "bursts")), params, use_seed), None
    except (SimulationError, ForecastError) as exc:
        raise ConfigError(f"service: {exc}") from None


def parse_forecast(sec: dict, base: Path, horizon: int | None, step_hours: float) -> ForecastSet | None:
    if not sec:
        return None
    sources = [k for k in ("constant", "point_kw", "file", "trace") if k in sec]
    if len(sources) != 1:
        raise ConfigError("forecast: give exactly one of 'constant', 'point_kw', 'file' or 'trace'")
    src = sources[0]
    try:
        if src == "constant":
            c = sec["constant"]
            if horizon is None:
                raise ConfigError("forecast.constant needs 'scheduler.horizon'")
            fc = ForecastSet.constant(_num(c, "forecast.constant", "p_lo_kw"), _num(c, "forecast.constant", "p_hi_kw"),
                                      _num(c, "forecast.constant", "w_lo_kwh"), _num(c, "forecast.constant", "w_hi_kwh"),
                                      horizon)
        elif src == "point_kw":
            fc = ForecastSet.point([float(v) for v in sec["point_kw"]], step_hours)
        elif src == "file":
            fc = read_forecast_csv(_path(base, sec["file"], "forecast.file"))
        else:
            if horizon is None:
                raise ConfigError("forecast.trace needs 'scheduler.horizon'")
            series = read_power_trace_csv(_path(base, sec["trace"], "forecast.trace"))
            fc = estimate_forecast_set(series, horizon, int(round(step_hours * 3600)),
                                       _num(sec, "forecast", "q_lo", 0.05), _num(sec, "forecast", "q_hi", 0.95))
    except ForecastError as exc:
        raise ConfigError(f"forecast: {exc}") from None
    if horizon is not None:
        if fc.horizon < horizon:
            raise ConfigError(f"forecast covers {fc.horizon} steps but scheduler.horizon is {horizon}")
        fc = fc.head(horizon)
    return fc


def load_config(path: str | Path, seed: int | None = None, mode: str | None = None) -> ScenarioConfig:
    """Parse a scenario document; ``seed`` and ``mode`` override the file's values."""
    path = Path(path)
    doc = load_yaml(path)
    base = path.parent
    circuit = parse_circuit(_section(doc, "circuit"), base)
    bess = parse_bess(_section(doc, "bess"))
    sched = _section(doc, "scheduler", required=False)
    sim = _section(doc, "simulation", required=False)
    sweep = _section(doc, "sweep", required=False)
    fsec = _section(doc, "forecast", required=False)

    try:
        m = Mode.parse(str(mode if mode not in (None, "all") else sched.get("mode", "dpc")))
    except ValueError:
        raise ConfigError(f"scheduler.mode: unknown mode {sched.get('mode')!r}") from None
    horizon = int(sched["horizon"]) if "horizon" in sched else None
    fc = parse_forecast(fsec, base, horizon, bess.step_hours)
    if horizon is None:
        horizon = fc.horizon if fc is not None else 16
    if horizon < 1:
        raise ConfigError("scheduler.horizon must be >= 1")

    service, service_path = parse_service(_section(doc, "service", required=False), base, seed)
    soc0 = _num(sim, "simulation", "soc0", _num(sched, "scheduler", "soc0", 0.5))
    if not 0.0 <= soc0 <= 1.0:
        raise ConfigError(f"initial SOC must lie in [0, 1], got {soc0}")
    soc_list = tuple(float(s) for s in sweep.get("soc0", (0.1, 0.2, 0.3, 0.4, 0.5)))
    plant_ocv = str(sim.get("plant_ocv", "fit"))
    if plant_ocv not in ("fit", "table"):
        raise ConfigError("simulation.plant_ocv must be 'fit' or 'table'")
    return ScenarioConfig(
        circuit=circuit, bess=bess, mode=m, horizon=horizon,
        soft_constraints=bool(sched.get("soft_constraints", True)), soc0=soc0,
        forecasts=fc, service=service, service_trace_path=service_path,
        envelope=_section(doc, "envelope", required=False),
        period_s=_num(sim, "simulation", "period_s", 90, int),
        plant_ocv=plant_ocv,
        oracle_r_multiplier=_num(sim, "simulation", "oracle_r_multiplier", 1.0),
        sweep_soc0=soc_list,
        workers=_num(sweep, "sweep", "workers", 1, int),
        forecast_estimation=fsec,
    )
