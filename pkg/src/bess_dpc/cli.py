"""Command-line front end.

Exit codes: 0 success, 2 config error, 3 infeasible, 4 solver failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .circuit import CircuitError, current_limits, feasible_power
from .config import ConfigError, ScenarioConfig, load_config
from .envelope import EnvelopeError, build_envelope, verify_convexity, write_boundary_csv, write_envelope_csv
from .forecast import ForecastError, estimate_forecast_set, write_forecast_csv
from .qpsolver import INFEASIBLE, MAX_ITER
from .scheduler import Mode, SchedulerBuildError, certify, config_for_mode, power_limits, schedule, write_schedule_csv
from .sim import SimulationError, SweepRow, simulate_cell, sweep_initial_soc, write_sweep_csv, write_trace_csv
from .svg import Series, line_chart

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_SOLVER = 0, 2, 3, 4


class CommandFailed(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _modes(cfg: ScenarioConfig, flag: str | None) -> list[Mode]:
    return list(Mode) if flag == "all" else [cfg.mode]


def _envelope_kwargs(cfg: ScenarioConfig) -> dict:
    e = cfg.envelope
    return dict(k_upper=int(e.get("k_upper", 2)), j_lower=int(e.get("j_lower", 2)),
                sample_count=int(e.get("sample_count", 101)),
                soc_domain=(cfg.bess.soc_min, cfg.bess.soc_max),
                ocv_source=str(e.get("ocv_source", "fit")),
                max_error_kw=float(e.get("max_error_kw", 25.0)))


def cmd_envelope(cfg: ScenarioConfig, out: Path, mode_flag: str | None = None) -> list[Path]:
    """Coefficient and boundary CSVs for the configured variant plus a chart of both."""
    kw = _envelope_kwargs(cfg)
    include_voltage = bool(cfg.envelope.get("include_voltage", True))
    env = build_envelope(cfg.circuit, include_voltage=include_voltage, **kw)
    if not verify_convexity(env):
        raise CommandFailed("envelope failed the midpoint convexity check", EXIT_SOLVER)
    socs = np.linspace(kw["soc_domain"][0], kw["soc_domain"][1], kw["sample_count"])
    exact = feasible_power(cfg.circuit, socs, kw["ocv_source"], include_voltage)
    files = [out / "envelope.csv", out / "boundary.csv", out / "envelope.svg"]
    write_envelope_csv(files[0], env)
    write_boundary_csv(files[1], socs, exact)

    other = build_envelope(cfg.circuit, include_voltage=not include_voltage, **kw)
    dpc, nv = (env, other) if include_voltage else (other, env)
    series = [
        Series("DPC upper", socs, dpc.upper_at(socs), "#1f77b4"),
        Series("DPC lower", socs, dpc.lower_at(socs), "#1f77b4"),
        Series("no-voltage upper", socs, nv.upper_at(socs), "#d62728", dashed=True),
        Series("no-voltage lower", socs, nv.lower_at(socs), "#d62728", dashed=True),
    ]
    line_chart(files[2], series, "Feasible power envelope", "SOC", "power (kW)")
    return files


def cmd_schedule(cfg: ScenarioConfig, out: Path, mode_flag: str | None = None) -> list[Path]:
    if cfg.forecasts is None:
        raise ConfigError("forecast: section is required for 'schedule'")
    files = []
    dpc_cfg = config_for_mode(Mode.DPC, cfg.circuit, cfg.bess, cfg.horizon)
    for mode in _modes(cfg, mode_flag):
        sc = config_for_mode(mode, cfg.circuit, cfg.bess, cfg.horizon, soft_constraints=cfg.soft_constraints)
        res = schedule(cfg.soc0, cfg.forecasts, sc)
        if res.solver_status == INFEASIBLE:
            fams = ", ".join(res.diagnosis) or "unknown"
            raise CommandFailed(f"{mode.value}: hard problem infeasible; violated families: {fams}", EXIT_INFEASIBLE)
        if res.solver_status == MAX_ITER:
            raise CommandFailed(f"{mode.value}: solver hit its iteration limit", EXIT_SOLVER)
        csv_path, svg_path = out / f"schedule_{mode.value}.csv", out / f"schedule_{mode.value}.svg"
        write_schedule_csv(csv_path, res)

        t = np.arange(cfg.horizon)
        br = cfg.bess.rated_power_kw
        up, lo = power_limits(res, cfg.soc0, cfg.forecasts, dpc_cfg)
        f = res.offsets_kw
        series = [
            Series("battery upper (P_hi+F)", t, cfg.forecasts.p_hi_kw + f, "#1f77b4"),
            Series("battery lower (P_lo+F)", t, cfg.forecasts.p_lo_kw + f, "#1f77b4", dashed=True),
            Series("offset F", t, f, "#2ca02c"),
            Series("SPC upper", t, np.full(t.size, br), "#7f7f7f"),
            Series("SPC lower", t, np.full(t.size, -br), "#7f7f7f", dashed=True),
            Series("DPC upper", t, up, "#d62728"),
            Series("DPC lower", t, lo, "#d62728", dashed=True),
        ]
        line_chart(svg_path, series, f"Schedule ({mode.value})", "step", "power (kW)")
        worst = certify(res, cfg.soc0, cfg.forecasts, sc)
        print(f"{mode.value}: objective {res.objective_value:.6g}, worst certified violation "
              f"{max(worst.values()):.3g}, slack {sum(res.slack_usage.values()):.3g}")
        files += [csv_path, svg_path]
    return files


def _current_chart(path: Path, cfg: ScenarioConfig, trace, report) -> None:
    i_lo, i_hi = current_limits(cfg.circuit, np.clip(trace.soc, 0.0, 1.0), cfg.plant_ocv)
    peaks_t = [e.start_s for e in report.events]
    peaks_i = [e.peak_current_a for e in report.events]
    series = [
        Series("current", trace.t_s, trace.current_a, "#1f77b4"),
        Series("upper limit", trace.t_s, i_hi, "#d62728"),
        Series("lower limit", trace.t_s, i_lo, "#d62728", dashed=True),
        Series("violations", peaks_t, peaks_i, "#000000", markers_only=True),
    ]
    line_chart(path, series, f"Battery current ({trace.mode})", "time (s)", "current (A)")


def cmd_simulate(cfg: ScenarioConfig, out: Path, mode_flag: str | None = None) -> list[Path]:
    scenario = cfg.scenario()
    files = []
    for mode in _modes(cfg, mode_flag):
        trace, report = simulate_cell(scenario, cfg.soc0, mode)
        paths = [out / f"trace_{mode.value}.csv", out / f"violations_{mode.value}.csv",
                 out / f"current_{mode.value}.svg"]
        write_trace_csv(paths[0], trace)
        write_sweep_csv(paths[1], [SweepRow(mode, cfg.soc0, report)])
        _current_chart(paths[2], cfg, trace, report)
        print(f"{mode.value}: {report.n_violations} violations, final SOC {trace.final_soc:.4f}")
        files += paths
    return files


def cmd_sweep(cfg: ScenarioConfig, out: Path, mode_flag: str | None = None) -> list[Path]:
    scenario = cfg.scenario()
    modes = list(Mode) if mode_flag in (None, "all") else [cfg.mode]
    rows = sweep_initial_soc(scenario, cfg.sweep_soc0, modes, workers=cfg.workers)
    csv_path, svg_path = out / "sweep.csv", out / "sweep.svg"
    write_sweep_csv(csv_path, rows)
    series = []
    for m in modes:
        sel = [r for r in rows if r.mode is m]
        series.append(Series(m.value, [r.soc0 for r in sel], [r.report.n_violations for r in sel]))
    line_chart(svg_path, series, "Current violations by initial SOC", "initial SOC", "violations")
    for r in rows:
        print(f"soc0 {r.soc0:.2f} {r.mode.value}: {r.report.n_violations}")
    return [csv_path, svg_path]


def cmd_forecast(cfg: ScenarioConfig, out: Path, mode_flag: str | None = None) -> list[Path]:
    """Empirical PIs from ``forecast.trace`` or, failing that, the service trace."""
    sec = cfg.forecast_estimation
    if "trace" in sec:
        fc = cfg.forecasts
    else:
        if cfg.service is None:
            raise ConfigError("forecast: needs 'forecast.trace' or a 'service' section to estimate from")
        fc = estimate_forecast_set(cfg.service.power_kw, cfg.horizon, int(round(cfg.bess.step_hours * 3600)),
                                   float(sec.get("q_lo", 0.05)), float(sec.get("q_hi", 0.95)))
    path = out / "forecast.csv"
    write_forecast_csv(path, fc)
    print(f"power PI [{fc.p_lo_kw[0]:.6g}, {fc.p_hi_kw[0]:.6g}] kW, "
          f"energy PI [{fc.w_lo_kwh[0]:.6g}, {fc.w_hi_kwh[0]:.6g}] kWh over {fc.horizon} steps")
    return [path]


COMMANDS = {
    "envelope": cmd_envelope,
    "schedule": cmd_schedule,
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "forecast": cmd_forecast,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bess-dpc", description="BESS scheduling with dynamic power constraints")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="YAML scenario document")
    p.add_argument("--out", default="out", help="output directory (created if missing)")
    p.add_argument("--seed", type=int, default=None, help="overrides service.synthetic.seed")
    p.add_argument("--mode", choices=["spc", "dpc", "dpc-nv", "all"], default=None)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.seed is not None and not 0 <= args.seed < 2 ** 64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(args.config, seed=args.seed, mode=args.mode)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        files = COMMANDS[args.command](cfg, out, args.mode)
    except CommandFailed as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (ConfigError, CircuitError, EnvelopeError, ForecastError, SimulationError, SchedulerBuildError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for f in files:
        print(f"wrote {f}")
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
