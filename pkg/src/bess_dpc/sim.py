"""Two-timescale closed loop and current-violation scoring.

A 1 s plant oracle integrates SOC and evaluates the circuit while the
scheduler is re-solved every ``period_s`` seconds from the measured SOC.
"""

from __future__ import annotations

import csv
import dataclasses
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .circuit import CircuitParams, current_limits, saturated_current, terminal_voltage
from .forecast import ForecastSet, read_power_trace_csv, write_power_trace_csv
from .qpsolver import INFEASIBLE, QpSolver, SolverSettings
from .scheduler import Mode, SchedulerConfig, config_for_mode, schedule, shift_warm_start
from .soc import BessConfig, h_step

SECOND_H = 1.0 / 3600.0


class SimulationError(ValueError):
    pass


@dataclass(frozen=True)
class ServiceTrace:
    """Real-time service demand sampled at 1 Hz (kW, discharge positive)."""

    power_kw: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.power_kw, dtype=float).reshape(-1)
        if p.size == 0:
            raise SimulationError("service trace is empty")
        if not np.all(np.isfinite(p)):
            raise SimulationError("service trace contains non-finite values")
        object.__setattr__(self, "power_kw", p)

    @property
    def duration_s(self) -> int:
        return int(self.power_kw.size)

    def __add__(self, other: "ServiceTrace") -> "ServiceTrace":
        n = max(self.duration_s, other.duration_s)
        a = np.zeros(n)
        a[: self.duration_s] += self.power_kw
        a[: other.duration_s] += other.power_kw
        return ServiceTrace(a)


def write_service_csv(path: str | Path, trace: ServiceTrace) -> None:
    write_power_trace_csv(path, trace.power_kw)


def read_service_csv(path: str | Path) -> ServiceTrace:
    return ServiceTrace(read_power_trace_csv(path))


# ---------------------------------------------------------------- synthetic services

def _bursts(rng: np.random.Generator, duration_s: int, amplitude_kw: float, duty: float,
            mean_burst_s: float) -> np.ndarray:
    """Telegraph bursts with alternating sign and random level in [A/2, A].

    On and off holding times are geometric with means giving the requested
    duty cycle.  Consecutive bursts flip sign, which keeps the mean near zero.
    """
    if not 0.0 < duty < 1.0:
        raise SimulationError("burst duty must lie in (0, 1)")
    if amplitude_kw < 0 or mean_burst_s < 1:
        raise SimulationError("burst amplitude must be >= 0 and mean length >= 1 s")
    mean_gap = mean_burst_s * (1.0 - duty) / duty
    out = np.zeros(duration_s)
    t = int(rng.geometric(1.0 / max(mean_gap, 1.0)))
    sign = 1.0 if rng.random() < 0.5 else -1.0
    while t < duration_s:
        length = int(rng.geometric(1.0 / mean_burst_s))
        out[t:t + length] = sign * rng.uniform(0.5, 1.0) * amplitude_kw
        sign = -sign
        t += length + int(rng.geometric(1.0 / max(mean_gap, 1.0)))
    return out


def _steps(segments: Sequence[Sequence[float]]) -> np.ndarray:
    parts = []
    for power_kw, hours in segments:
        n = int(round(float(hours) * 3600.0))
        if n < 0:
            raise SimulationError("step durations must be >= 0")
        parts.append(np.full(n, float(power_kw)))
    return np.concatenate(parts) if parts else np.zeros(0)


def make_synthetic_service(kind: str, params: dict | None = None, seed: int = 0) -> ServiceTrace:
    """Deterministic synthetic service power.

    ``bursts`` takes ``duration_s, amplitude_kw, duty, mean_burst_s``;
    ``steps`` takes ``segments`` as ``[(power_kw, hours), ...]``;
    ``mixed`` takes both sets and returns their sum, padded to the longer one.
    """
    p = dict(params or {})
    rng = np.random.default_rng(seed)
    burst_args = dict(
        duration_s=int(p.get("duration_s", 7200)),
        amplitude_kw=float(p.get("amplitude_kw", 600.0)),
        duty=float(p.get("duty", 0.1)),
        mean_burst_s=float(p.get("mean_burst_s", 30.0)),
    )
    if kind == "bursts":
        return ServiceTrace(_bursts(rng, **burst_args))
    if kind == "steps":
        return ServiceTrace(_steps(p.get("segments", [])))
    if kind == "mixed":
        b = ServiceTrace(_bursts(rng, **burst_args))
        steps = _steps(p.get("segments", []))
        if steps.size == 0:
            return b
        s = ServiceTrace(steps[: b.duration_s] if p.get("truncate", True) else steps)
        return b + s
    raise SimulationError(f"unknown service kind {kind!r}; expected bursts, steps or mixed")


# ---------------------------------------------------------------- closed loop

@dataclass
class PeriodLog:
    t_s: int
    soc: float
    offset_kw: float
    status: str
    slack_total: float
    iterations: int
    sign_fixed: bool
    complementarity_kw: float


@dataclass
class SimulationTrace:
    t_s: np.ndarray
    service_kw: np.ndarray
    offset_kw: np.ndarray
    battery_kw: np.ndarray
    soc: np.ndarray  # SOC at the start of each second
    current_a: np.ndarray
    voltage_v: np.ndarray
    saturated: np.ndarray
    final_soc: float
    soc0: float
    mode: str = ""
    scheduler_log: list[PeriodLog] = field(default_factory=list)

    def __len__(self):
        return int(self.t_s.size)


def plant_circuit(circuit: CircuitParams, r_multiplier: float = 1.0) -> CircuitParams:
    if r_multiplier <= 0:
        raise SimulationError("oracle resistance multiplier must be > 0")
    return dataclasses.replace(circuit, series_resistance_ohm=circuit.series_resistance_ohm * r_multiplier)


def run_closed_loop(
    trace: ServiceTrace,
    scheduler_cfg: SchedulerConfig,
    circuit: CircuitParams,
    soc0: float,
    forecasts: ForecastSet,
    period_s: int = 90,
    plant_ocv: str = "fit",
    oracle_r_multiplier: float = 1.0,
    solver_settings: SolverSettings | None = None,
) -> SimulationTrace:
    """Receding-horizon run: re-solve every period, hold F_0, integrate at 1 s.

    Currents are computed from the plant circuit even past its limits; power
    beyond the parabola apex saturates at v_oc/(2R) and is flagged.
    """
    if period_s < 1 or trace.duration_s < period_s:
        raise SimulationError(f"trace of {trace.duration_s} s is shorter than one {period_s} s period")
    if not 0.0 <= soc0 <= 1.0:
        raise SimulationError(f"initial SOC must lie in [0, 1], got {soc0}")
    bess_1s = scheduler_cfg.bess.with_step(SECOND_H)
    solver = QpSolver(solver_settings)
    n = trace.duration_s
    offsets = np.zeros(n)
    soc = np.empty(n + 1)
    soc[0] = soc0
    log: list[PeriodLog] = []
    prev = None
    for start in range(0, n, period_s):
        stop = min(start + period_s, n)
        measured = float(np.clip(soc[start], 0.0, 1.0))
        warm = shift_warm_start(prev, scheduler_cfg.horizon, scheduler_cfg.soft_constraints)
        res = schedule(measured, forecasts, scheduler_cfg, solver, warm_start=warm)
        usable = res.solver_status != INFEASIBLE  # a max_iter iterate is still applied
        f0 = float(res.offsets_kw[0]) if usable else 0.0
        prev = res if usable else None
        sol = res.solution
        log.append(PeriodLog(start, measured, f0, res.solver_status,
                             float(np.nansum(list(res.slack_usage.values()))),
                             sol.iterations if sol is not None else 0, res.sign_fixed,
                             res.complementarity_kw))
        offsets[start:stop] = f0
        battery = trace.power_kw[start:stop] + f0
        soc[start + 1:stop + 1] = soc[start] - np.cumsum(h_step(battery, bess_1s))

    battery = trace.power_kw + offsets
    plant = plant_circuit(circuit, oracle_r_multiplier)
    s = np.clip(soc[:-1], 0.0, 1.0)  # OCV is only defined on [0, 1]
    current, sat = saturated_current(plant, s, battery, plant_ocv)
    voltage = terminal_voltage(plant, s, current, plant_ocv)
    return SimulationTrace(
        t_s=np.arange(n), service_kw=trace.power_kw.copy(), offset_kw=offsets, battery_kw=battery,
        soc=soc[:-1].copy(), current_a=np.asarray(current, dtype=float), voltage_v=np.asarray(voltage, dtype=float),
        saturated=np.asarray(sat, dtype=bool), final_soc=float(soc[-1]), soc0=float(soc0),
        mode=scheduler_cfg.mode.value, scheduler_log=log,
    )


# ---------------------------------------------------------------- violation scoring

@dataclass(frozen=True)
class ViolationEvent:
    side: str  # "upper" or "lower"
    start_s: int
    end_s: int  # last second of the excursion, inclusive
    peak_current_a: float
    limit_a: float

    @property
    def peak_diff_a(self) -> float:
        return self.peak_current_a - self.limit_a


@dataclass(frozen=True)
class ViolationReport:
    events: tuple[ViolationEvent, ...]

    def _diffs(self, side: str) -> np.ndarray:
        return np.array([e.peak_diff_a for e in self.events if e.side == side])

    @property
    def n_violations(self) -> int:
        return len(self.events)

    @property
    def n_upper(self) -> int:
        return int(self._diffs("upper").size)

    @property
    def n_lower(self) -> int:
        return int(self._diffs("lower").size)

    def _stat(self, side: str, fn):
        d = self._diffs(side)
        return float(fn(d)) if d.size else None

    @property
    def mean_upper(self):
        return self._stat("upper", np.mean)

    @property
    def var_upper(self):
        return self._stat("upper", np.var)

    @property
    def mean_lower(self):
        return self._stat("lower", np.mean)

    @property
    def var_lower(self):
        return self._stat("lower", np.var)

    def merged(self, other: "ViolationReport") -> "ViolationReport":
        return ViolationReport(self.events + other.events)


def _runs(mask: np.ndarray) -> list[tuple[int, int]]:
    """Inclusive (start, end) index pairs of the True runs in ``mask``."""
    if not mask.any():
        return []
    m = np.concatenate([[False], mask, [False]]).astype(np.int8)
    edges = np.diff(m)
    starts = np.flatnonzero(edges == 1)
    ends = np.flatnonzero(edges == -1) - 1
    return list(zip(starts.tolist(), ends.tolist()))


def score_excursions(current_a, i_lo_a, i_hi_a, t0: int = 0, tol_a: float = 1e-6) -> ViolationReport:
    """Group seconds outside ``[i_lo, i_hi]`` into events and record their peaks."""
    i = np.asarray(current_a, dtype=float)
    lo = np.broadcast_to(np.asarray(i_lo_a, dtype=float), i.shape)
    hi = np.broadcast_to(np.asarray(i_hi_a, dtype=float), i.shape)
    events = []
    for side, excess in (("upper", i - hi), ("lower", lo - i)):
        for a, b in _runs(excess > tol_a):
            k = a + int(np.argmax(excess[a:b + 1]))
            limit = hi[k] if side == "upper" else lo[k]
            events.append(ViolationEvent(side, t0 + a, t0 + b, float(i[k]), float(limit)))
    events.sort(key=lambda e: (e.start_s, e.side))
    return ViolationReport(tuple(events))


def assess_violations(
    trace: SimulationTrace,
    circuit: CircuitParams,
    source: str = "fit",
    oracle_r_multiplier: float = 1.0,
) -> ViolationReport:
    """Score currents against the SOC-dependent limits of the plant circuit."""
    if len(trace) == 0:
        raise SimulationError("cannot assess an empty trace")
    plant = plant_circuit(circuit, oracle_r_multiplier)
    i_lo, i_hi = current_limits(plant, np.clip(trace.soc, 0.0, 1.0), source)
    return score_excursions(trace.current_a, i_lo, i_hi, int(trace.t_s[0]))


# ---------------------------------------------------------------- sweeps

@dataclass(frozen=True)
class Scenario:
    circuit: CircuitParams
    bess: BessConfig
    forecasts: ForecastSet
    service: ServiceTrace
    horizon: int = 16
    period_s: int = 90
    soft_constraints: bool = True
    plant_ocv: str = "fit"
    oracle_r_multiplier: float = 1.0
    solver_settings: SolverSettings | None = None

    def scheduler_config(self, mode: Mode) -> SchedulerConfig:
        return config_for_mode(mode, self.circuit, self.bess, self.horizon,
                               soft_constraints=self.soft_constraints)


@dataclass(frozen=True)
class SweepRow:
    mode: Mode
    soc0: float
    report: ViolationReport


def simulate_cell(scenario: Scenario, soc0: float, mode: Mode) -> tuple[SimulationTrace, ViolationReport]:
    cfg = scenario.scheduler_config(mode)
    tr = run_closed_loop(scenario.service, cfg, scenario.circuit, soc0, scenario.forecasts,
                         scenario.period_s, scenario.plant_ocv, scenario.oracle_r_multiplier,
                         scenario.solver_settings)
    rep = assess_violations(tr, scenario.circuit, scenario.plant_ocv, scenario.oracle_r_multiplier)
    return tr, rep


def _cell(args) -> SweepRow:
    scenario, soc0, mode = args
    return SweepRow(mode, soc0, simulate_cell(scenario, soc0, mode)[1])


def sweep_initial_soc(
    scenario: Scenario,
    soc0_list: Iterable[float],
    modes: Iterable[Mode] = tuple(Mode),
    workers: int = 1,
) -> list[SweepRow]:
    """One violation report per (soc0, mode), ordered by soc0 then the given mode order."""
    modes = [Mode.parse(m) if isinstance(m, str) else m for m in modes]
    jobs = [(scenario, float(s), m) for s in soc0_list for m in modes]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_cell, jobs))
    return [_cell(j) for j in jobs]


SWEEP_COLUMNS = ("mode", "n_violations", "mean_upper", "var_upper", "mean_lower", "var_lower", "soc0")


def _fmt(v) -> str:
    return "-" if v is None else repr(float(v))


def write_sweep_csv(path: str | Path, rows: Sequence[SweepRow]) -> None:
    """Violation table; sides without events are written as ``-``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for r in rows:
            rep = r.report
            w.writerow([r.mode.value, rep.n_violations, _fmt(rep.mean_upper), _fmt(rep.var_upper),
                        _fmt(rep.mean_lower), _fmt(rep.var_lower), repr(float(r.soc0))])


def read_sweep_csv(path: str | Path) -> list[dict]:
    def num(v):
        return None if v == "-" else float(v)

    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != SWEEP_COLUMNS:
            raise SimulationError(f"{path}: expected header {','.join(SWEEP_COLUMNS)}")
        return [
            {"mode": Mode.parse(r["mode"]), "n_violations": int(r["n_violations"]),
             "mean_upper": num(r["mean_upper"]), "var_upper": num(r["var_upper"]),
             "mean_lower": num(r["mean_lower"]), "var_lower": num(r["var_lower"]),
             "soc0": float(r["soc0"])}
            for r in reader
        ]


TRACE_COLUMNS = ("t_s", "service_kw", "offset_kw", "battery_kw", "soc", "current_a", "voltage_v", "saturated")


def write_trace_csv(path: str | Path, trace: SimulationTrace) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for k in range(len(trace)):
            w.writerow([int(trace.t_s[k]), repr(float(trace.service_kw[k])), repr(float(trace.offset_kw[k])),
                        repr(float(trace.battery_kw[k])), repr(float(trace.soc[k])),
                        repr(float(trace.current_a[k])), repr(float(trace.voltage_v[k])),
                        int(bool(trace.saturated[k]))])


def read_trace_csv(path: str | Path) -> SimulationTrace:
    """Per-second columns only; the scheduler log and final SOC are not stored."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != TRACE_COLUMNS:
            raise SimulationError(f"{path}: expected header {','.join(TRACE_COLUMNS)}")
        rows = list(reader)
    if not rows:
        raise SimulationError(f"{path}: empty trace")
    col = {c: np.array([float(r[c]) for r in rows]) for c in TRACE_COLUMNS}
    soc = col["soc"]
    return SimulationTrace(
        t_s=col["t_s"].astype(int), service_kw=col["service_kw"], offset_kw=col["offset_kw"],
        battery_kw=col["battery_kw"], soc=soc, current_a=col["current_a"], voltage_v=col["voltage_v"],
        saturated=col["saturated"].astype(bool), final_soc=float("nan"), soc0=float(soc[0]),
    )
