"""Offset-profile scheduler with static or SOC-dependent power constraints.

Decision variables per step t (``T`` steps):

* ``F_t``: offset added to the service power forecast,
* ``d_t, c_t`` for each of the two SOC trajectories: discharge/charge parts of
  the trajectory power ``W_t/dt + F_t = d_t - c_t`` so the lossy SOC update is
  affine in the variables,
* with soft constraints, one non-negative slack per step and constraint
  family (discharge power, charge power, SOC floor, SOC ceiling).

Power constraints in the DPC modes are imposed at both the start-of-step and
end-of-step SOC of both trajectories.
"""

from __future__ import annotations

import csv
import dataclasses
import enum
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .envelope import EnvelopeError, PowerEnvelope, build_envelope
from .circuit import CircuitParams
from .forecast import ForecastSet
from .qpsolver import INFEASIBLE, SOLVED, QpSolution, QpSolver, QuadraticProgram, SolverSettings, kkt_residuals
from .soc import BessConfig, SocTrajectory, soc_pi_trajectories

AUX_WEIGHT = 1e-11
# feasible hard problems converge in a few hundred iterations; past this the
# soft problem is solved instead
HARD_PROBE_ITERS = 2000
FAMILIES = ("power_upper", "power_lower", "soc_lower", "soc_upper")


class Mode(str, enum.Enum):
    SPC = "spc"
    DPC = "dpc"
    DPC_NO_VOLTAGE = "dpc-nv"

    @classmethod
    def parse(cls, text: str) -> "Mode":
        aliases = {"dpc_no_voltage": "dpc-nv", "dpc-no-voltage": "dpc-nv", "dpcnv": "dpc-nv"}
        t = text.strip().lower()
        return cls(aliases.get(t, t))


class SchedulerBuildError(ValueError):
    pass


class InfeasibleScheduleError(SchedulerBuildError):
    def __init__(self, message: str, families: tuple[str, ...]):
        super().__init__(message)
        self.families = families


@dataclass(frozen=True)
class SchedulerConfig:
    mode: Mode
    bess: BessConfig
    horizon: int
    envelope: PowerEnvelope | None = None
    cost_weights: tuple[float, ...] | None = None
    soft_constraints: bool = True
    slack_penalty: float = 1e6
    complementarity_tol_kw: float = 1e-3

    def __post_init__(self):
        if self.horizon < 1:
            raise SchedulerBuildError("horizon must be >= 1")
        if self.cost_weights is not None:
            if len(self.cost_weights) != self.horizon or min(self.cost_weights) < 0:
                raise SchedulerBuildError("cost weights must be non-negative, one per step")
        if self.mode is not Mode.SPC and self.envelope is None:
            raise SchedulerBuildError(f"mode {self.mode.value} requires an envelope")

    def weights(self) -> np.ndarray:
        if self.cost_weights is None:
            return np.ones(self.horizon)
        return np.asarray(self.cost_weights, dtype=float)


def config_for_mode(
    mode: Mode,
    circuit: CircuitParams,
    bess: BessConfig,
    horizon: int,
    **kwargs,
) -> SchedulerConfig:
    """SchedulerConfig with the envelope each mode implies (K = J = 2 lines)."""
    env = None
    if mode is not Mode.SPC:
        env = build_envelope(circuit, include_voltage=(mode is Mode.DPC),
                             soc_domain=(bess.soc_min, bess.soc_max))
    return SchedulerConfig(mode=mode, bess=bess, horizon=horizon, envelope=env, **kwargs)


@dataclass(frozen=True)
class Layout:
    horizon: int
    soft: bool

    @property
    def n(self) -> int:
        return self.horizon * (9 if self.soft else 5)

    def block(self, k: int) -> slice:
        t = self.horizon
        return slice(k * t, (k + 1) * t)

    # variable blocks
    F, DL, CL, DH, CH, SU, SL, SA, SB = range(9)

    def idx(self, block: int, t: int) -> int:
        return block * self.horizon + t

    def slack_blocks(self) -> dict[str, int]:
        return dict(zip(FAMILIES, (self.SU, self.SL, self.SA, self.SB)))


@dataclass
class SchedulingQP(QuadraticProgram):
    layout: Layout | None = None
    row_family: list = field(default_factory=list)
    sign_rows: dict = field(default_factory=dict)


@dataclass
class ScheduleResult:
    offsets_kw: np.ndarray
    soc_pi: SocTrajectory
    slack_usage: dict
    solver_status: str
    objective_value: float
    complementarity_kw: float = 0.0
    sign_fixed: bool = False
    diagnosis: tuple[str, ...] = ()
    slack_per_step: np.ndarray | None = None
    solution: QpSolution | None = None

    @property
    def feasible(self) -> bool:
        return self.solver_status == SOLVED


class _RowBuilder:
    def __init__(self, n: int):
        self.n = n
        self.rows: list[np.ndarray] = []
        self.lo: list[float] = []
        self.hi: list[float] = []
        self.family: list[str] = []

    def add(self, coeffs: np.ndarray, lo: float, hi: float, family: str) -> int:
        self.rows.append(coeffs)
        self.lo.append(lo)
        self.hi.append(hi)
        self.family.append(family)
        return len(self.rows) - 1

    def unit(self, i: int, scale: float = 1.0) -> np.ndarray:
        r = np.zeros(self.n)
        r[i] = scale
        return r


def _soc_expr(lay: Layout, bess: BessConfig, soc0: float, traj: str, t: int) -> tuple[float, np.ndarray]:
    """SOC of a trajectory at the start of step t as const + coeffs @ x."""
    g = bess.step_hours / bess.energy_capacity_kwh
    eta = bess.efficiency
    d_blk, c_blk = (lay.DL, lay.CL) if traj == "lo" else (lay.DH, lay.CH)
    row = np.zeros(lay.n)
    for tau in range(t):
        row[lay.idx(d_blk, tau)] = -g / eta
        row[lay.idx(c_blk, tau)] = g * eta
    return soc0, row


def _soc_ceiling_expr(lay: Layout, bess: BessConfig, soc0: float, w_kwh: np.ndarray, t: int) -> tuple[float, np.ndarray]:
    """Affine upper bound on a trajectory's SOC at the start of step t.

    Charging at efficiency eta is exact and discharging is overcharged by
    (1/eta - eta).  Rows that a lower SOC would relax use this form, so the
    split variables cannot buy slack by charging and discharging at once.
    """
    g = bess.step_hours / bess.energy_capacity_kwh
    eta = bess.efficiency
    row = np.zeros(lay.n)
    row[lay.idx(lay.F, 0):lay.idx(lay.F, 0) + t] = -g * eta
    return soc0 - g * eta * float(np.sum(w_kwh[:t])) / bess.step_hours, row


def _common(soc0: float, fc: ForecastSet, cfg: SchedulerConfig) -> tuple[Layout, _RowBuilder, np.ndarray, np.ndarray]:
    if fc.horizon != cfg.horizon:
        raise SchedulerBuildError(f"forecast horizon {fc.horizon} != scheduler horizon {cfg.horizon}")
    lay = Layout(cfg.horizon, cfg.soft_constraints)
    rb = _RowBuilder(lay.n)
    bess = cfg.bess
    dt = bess.step_hours
    T = cfg.horizon

    w = np.full(lay.n, AUX_WEIGHT)
    wt = cfg.weights()
    w[lay.block(lay.F)] = np.where(wt > 0, wt, AUX_WEIGHT)
    c = np.zeros(lay.n)
    if lay.soft:
        for blk in (lay.SU, lay.SL, lay.SA, lay.SB):
            c[lay.block(blk)] = cfg.slack_penalty

    for t in range(T):
        for d_blk, c_blk, w_pi in ((lay.DL, lay.CL, fc.w_hi_kwh[t]), (lay.DH, lay.CH, fc.w_lo_kwh[t])):
            r = rb.unit(lay.idx(d_blk, t))
            r[lay.idx(c_blk, t)] = -1.0
            r[lay.idx(lay.F, t)] = -1.0
            rb.add(r, w_pi / dt, w_pi / dt, "dynamics")
    sign_rows = {}
    for blk in (lay.DL, lay.CL, lay.DH, lay.CH):
        for t in range(T):
            k = rb.add(rb.unit(lay.idx(blk, t)), 0.0, np.inf, "nonneg")
            sign_rows[(blk, t)] = k

    e = bess.energy_capacity_kwh
    for t in range(T):
        const, row = _soc_expr(lay, bess, soc0, "lo", t + 1)
        if lay.soft:
            row = row.copy()
            row[lay.idx(lay.SA, t)] = 1.0 / e
        rb.add(row, bess.soc_min - const, np.inf, "soc_lower")
        const, row = _soc_ceiling_expr(lay, bess, soc0, fc.w_lo_kwh, t + 1)
        if lay.soft:
            row = row.copy()
            row[lay.idx(lay.SB, t)] = -1.0 / e
        rb.add(row, -np.inf, bess.soc_max - const, "soc_upper")
    rb.sign_rows = sign_rows
    return lay, rb, w, c


def _finish(lay: Layout, rb: _RowBuilder, w, c) -> SchedulingQP:
    # slack sign rows go last so a soft problem's leading rows mirror the hard one
    if lay.soft:
        for blk in (lay.SU, lay.SL, lay.SA, lay.SB):
            for t in range(lay.horizon):
                rb.add(rb.unit(lay.idx(blk, t)), 0.0, np.inf, "nonneg")
    return SchedulingQP(
        hessian_diag=w, linear_cost=c, ineq_matrix=np.array(rb.rows),
        ineq_lower=np.array(rb.lo), ineq_upper=np.array(rb.hi),
        layout=lay, row_family=list(rb.family), sign_rows=dict(rb.sign_rows),
    )


def build_spc_problem(soc0: float, forecasts: ForecastSet, cfg: SchedulerConfig) -> SchedulingQP:
    br = cfg.bess.rated_power_kw
    spread = forecasts.p_hi_kw - forecasts.p_lo_kw
    if not cfg.soft_constraints and np.any(spread > 2.0 * br):
        t = int(np.argmax(spread))
        raise InfeasibleScheduleError(
            f"power PI spread {spread[t]:.1f} kW at step {t} exceeds twice the rating {br} kW",
            ("power_upper", "power_lower"),
        )
    lay, rb, w, c = _common(soc0, forecasts, cfg)
    for t in range(cfg.horizon):
        r = rb.unit(lay.idx(lay.F, t))
        if lay.soft:
            r[lay.idx(lay.SU, t)] = -1.0
        rb.add(r, -np.inf, br - forecasts.p_hi_kw[t], "power_upper")
        r = rb.unit(lay.idx(lay.F, t))
        if lay.soft:
            r[lay.idx(lay.SL, t)] = 1.0
        rb.add(r, -br - forecasts.p_lo_kw[t], np.inf, "power_lower")
    return _finish(lay, rb, w, c)


def build_dpc_problem(soc0: float, forecasts: ForecastSet, cfg: SchedulerConfig) -> SchedulingQP:
    env = cfg.envelope
    if env is None:
        raise SchedulerBuildError("DPC scheduling requires an envelope")
    lo, hi = env.soc_domain
    if cfg.bess.soc_min < lo - 1e-9 or cfg.bess.soc_max > hi + 1e-9:
        raise SchedulerBuildError(
            f"envelope domain {env.soc_domain} does not cover the SOC range "
            f"[{cfg.bess.soc_min}, {cfg.bess.soc_max}] the scheduler may reach"
        )
    lay, rb, w, c = _common(soc0, forecasts, cfg)
    for t in range(cfg.horizon):
        variants = [("lo", t), ("lo", t + 1), ("hi", t + 1)]
        if t > 0:
            variants.append(("hi", t))
        for traj, tt in variants:
            exact = _soc_expr(lay, cfg.bess, soc0, traj, tt)
            w_traj = forecasts.w_hi_kwh if traj == "lo" else forecasts.w_lo_kwh
            ceiling = _soc_ceiling_expr(lay, cfg.bess, soc0, w_traj, tt)
            for a, b in env.upper:
                const, srow = exact if b >= 0 else ceiling
                r = -b * srow
                r[lay.idx(lay.F, t)] += 1.0
                if lay.soft:
                    r[lay.idx(lay.SU, t)] = -1.0
                rb.add(r, -np.inf, a + b * const - forecasts.p_hi_kw[t], "power_upper")
            for a, b in env.lower:
                const, srow = ceiling if b > 0 else exact
                r = -b * srow
                r[lay.idx(lay.F, t)] += 1.0
                if lay.soft:
                    r[lay.idx(lay.SL, t)] = 1.0
                rb.add(r, a + b * const - forecasts.p_lo_kw[t], np.inf, "power_lower")
    return _finish(lay, rb, w, c)


def build_problem(soc0: float, forecasts: ForecastSet, cfg: SchedulerConfig) -> SchedulingQP:
    if cfg.mode is Mode.SPC:
        return build_spc_problem(soc0, forecasts, cfg)
    return build_dpc_problem(soc0, forecasts, cfg)


def complementarity_gap(x: np.ndarray, lay: Layout) -> float:
    """Largest simultaneous charge/discharge, in kW, over steps and trajectories."""
    gaps = [np.minimum(x[lay.block(d)], x[lay.block(c)]) for d, c in ((lay.DL, lay.CL), (lay.DH, lay.CH))]
    return float(max(np.max(g) for g in gaps))


def _fix_signs(qp: SchedulingQP, x: np.ndarray) -> SchedulingQP:
    lay = qp.layout
    upper = qp.ineq_upper.copy()
    for d_blk, c_blk in ((lay.DL, lay.CL), (lay.DH, lay.CH)):
        for t in range(lay.horizon):
            net = x[lay.idx(d_blk, t)] - x[lay.idx(c_blk, t)]
            off = c_blk if net >= 0 else d_blk
            upper[qp.sign_rows[(off, t)]] = 0.0
    return SchedulingQP(qp.hessian_diag, qp.linear_cost, qp.ineq_matrix, qp.ineq_lower, upper,
                        layout=lay, row_family=qp.row_family, sign_rows=qp.sign_rows)


def _violated_families(soc0, forecasts, cfg, solver) -> tuple[str, ...]:
    soft = SchedulerConfig(cfg.mode, cfg.bess, cfg.horizon, cfg.envelope, cfg.cost_weights,
                           soft_constraints=True, slack_penalty=cfg.slack_penalty,
                           complementarity_tol_kw=cfg.complementarity_tol_kw)
    res = schedule(soc0, forecasts, soft, solver)
    return tuple(f for f in FAMILIES if res.slack_usage.get(f, 0.0) > 1e-6)


def shift_warm_start(prev: ScheduleResult | None, horizon: int, soft: bool) -> np.ndarray | None:
    """Previous primal solution advanced by one step, for receding-horizon re-solves."""
    if prev is None or prev.solution is None:
        return None
    lay = Layout(horizon, soft)
    x = prev.solution.x
    if x.size != lay.n:
        return None
    blocks = x.reshape(-1, horizon)
    return np.concatenate([blocks[:, 1:], blocks[:, -1:]], axis=1).ravel()


def _solve_with_audit(qp: SchedulingQP, solver: QpSolver, warm, tol_kw: float):
    """Solve, then re-solve with signs fixed if charge and discharge overlap."""
    sol = solver.solve(qp, (warm, None) if warm is not None else None)
    if sol.status != INFEASIBLE and complementarity_gap(sol.x, qp.layout) > tol_kw:
        qp = _fix_signs(qp, sol.x)
        return solver.solve(qp, (sol.x, None)), qp, True
    return sol, qp, False


def _lift_hard_solution(soft: SchedulingQP, hard: SchedulingQP, sol: QpSolution) -> QpSolution | None:
    """Soft-problem solution with zero slack, if the hard optimum certifies as one.

    The slack penalty is linear, so the hard optimum is also the soft optimum
    whenever no constraint multiplier exceeds the penalty.  That is exactly
    the condition that the slack sign multipliers come out non-negative.
    """
    mh = hard.m
    x = np.zeros(soft.n)
    x[: hard.n] = sol.x
    upper = soft.ineq_upper.copy()
    upper[:mh] = hard.ineq_upper  # carries any sign fixing over
    lifted = SchedulingQP(soft.hessian_diag, soft.linear_cost, soft.ineq_matrix, soft.ineq_lower, upper,
                          layout=soft.layout, row_family=soft.row_family, sign_rows=soft.sign_rows)
    cols = np.arange(hard.n, soft.n)
    mu = soft.linear_cost[cols] - soft.ineq_matrix[:mh, cols].T @ sol.duals
    if np.any(mu < -1e-9 * max(1.0, float(np.max(np.abs(soft.linear_cost))))):
        return None
    duals = np.concatenate([sol.duals, mu])
    pr, du = kkt_residuals(lifted, x, duals)
    return QpSolution(x, sol.status, pr, du, sol.iterations, duals, lifted.objective(x), sol.polished)


def schedule(
    soc0: float,
    forecasts: ForecastSet,
    cfg: SchedulerConfig,
    solver: QpSolver | SolverSettings | None = None,
    warm_start: np.ndarray | None = None,
) -> ScheduleResult:
    """Build the problem for ``cfg.mode``, solve it and unpack the offsets.

    In soft mode the hard problem is tried first; its solution is kept when
    it certifies as the soft optimum, which avoids the badly scaled penalty
    problem in the common case where every constraint can be met.
    """
    if not isinstance(solver, QpSolver):
        solver = QpSolver(solver)
    try:
        qp = build_problem(soc0, forecasts, cfg)
    except InfeasibleScheduleError as exc:
        return _infeasible_result(soc0, forecasts, cfg, exc.families)
    lay = qp.layout
    tol_kw = cfg.complementarity_tol_kw

    sol = None
    sign_fixed = False
    if lay.soft:
        hard_cfg = dataclasses.replace(cfg, soft_constraints=False)
        try:
            hard_qp = build_problem(soc0, forecasts, hard_cfg)
        except InfeasibleScheduleError:
            hard_qp = None
        if hard_qp is not None:
            hw = warm_start[: hard_qp.n] if warm_start is not None else None
            probe = QpSolver(dataclasses.replace(
                solver.settings, max_iter=min(solver.settings.max_iter, HARD_PROBE_ITERS)))
            hs, hard_qp, fixed = _solve_with_audit(hard_qp, probe, hw, tol_kw)
            if hs.status == SOLVED:
                sol = _lift_hard_solution(qp, hard_qp, hs)
                sign_fixed = fixed
    if sol is None:
        sol, _, sign_fixed = _solve_with_audit(qp, solver, warm_start, tol_kw)

    if sol.status == INFEASIBLE:
        families = () if cfg.soft_constraints else _violated_families(soc0, forecasts, cfg, solver)
        return _infeasible_result(soc0, forecasts, cfg, families, sol, sign_fixed)

    x = sol.x
    f = x[lay.block(lay.F)].copy()
    usage, per_step = {}, np.zeros(cfg.horizon)
    if lay.soft:
        for fam, blk in lay.slack_blocks().items():
            s = np.maximum(x[lay.block(blk)], 0.0)
            usage[fam] = float(s.sum())
            per_step += s
    else:
        usage = {fam: 0.0 for fam in FAMILIES}
    traj = soc_pi_trajectories(soc0, forecasts.w_lo_kwh, forecasts.w_hi_kwh, f, cfg.bess)
    return ScheduleResult(
        offsets_kw=f,
        soc_pi=traj,
        slack_usage=usage,
        solver_status=sol.status,
        objective_value=float(np.dot(cfg.weights(), f * f)),
        complementarity_kw=complementarity_gap(x, lay),
        sign_fixed=sign_fixed,
        slack_per_step=per_step,
        solution=sol,
    )


def _infeasible_result(soc0, forecasts, cfg, families, sol=None, sign_fixed=False) -> ScheduleResult:
    f = np.zeros(cfg.horizon)
    return ScheduleResult(
        offsets_kw=f,
        soc_pi=soc_pi_trajectories(soc0, forecasts.w_lo_kwh, forecasts.w_hi_kwh, f, cfg.bess),
        slack_usage={fam: float("nan") for fam in FAMILIES},
        solver_status=INFEASIBLE,
        objective_value=float("nan"),
        sign_fixed=sign_fixed,
        diagnosis=tuple(families),
        solution=sol,
    )


def power_limits(result_or_offsets, soc0: float, forecasts: ForecastSet, cfg: SchedulerConfig):
    """Discharge/charge limits each step is held to, evaluated on the realized SOC PIs.

    Returns ``(upper, lower)`` arrays of length T: the tightest bound over the
    start/end SOC of both trajectories.
    """
    f = getattr(result_or_offsets, "offsets_kw", result_or_offsets)
    f = np.asarray(f, dtype=float)
    T = cfg.horizon
    if cfg.mode is Mode.SPC:
        br = cfg.bess.rated_power_kw
        return np.full(T, br), np.full(T, -br)
    traj = soc_pi_trajectories(soc0, forecasts.w_lo_kwh, forecasts.w_hi_kwh, f, cfg.bess)
    env = cfg.envelope
    socs = np.stack([traj.soc_lo[:-1], traj.soc_lo[1:], traj.soc_hi[:-1], traj.soc_hi[1:]])
    return np.min(env.upper_at(socs), axis=0), np.max(env.lower_at(socs), axis=0)


def certify(result: ScheduleResult, soc0: float, forecasts: ForecastSet, cfg: SchedulerConfig) -> dict:
    """Re-evaluate every constraint family on the returned offsets with the exact SOC model.

    Returns the worst violation per family (kW for power, SOC fraction for SOC).
    """
    f = result.offsets_kw
    traj = soc_pi_trajectories(soc0, forecasts.w_lo_kwh, forecasts.w_hi_kwh, f, cfg.bess)
    up, lo = power_limits(f, soc0, forecasts, cfg)
    return {
        "power_upper": float(max(0.0, np.max(forecasts.p_hi_kw + f - up))),
        "power_lower": float(max(0.0, np.max(lo - (forecasts.p_lo_kw + f)))),
        "soc_lower": float(max(0.0, np.max(cfg.bess.soc_min - traj.soc_lo[1:]))),
        "soc_upper": float(max(0.0, np.max(traj.soc_hi[1:] - cfg.bess.soc_max))),
    }


def write_schedule_csv(path: str | Path, result: ScheduleResult) -> None:
    T = result.offsets_kw.size
    slack = result.slack_per_step if result.slack_per_step is not None else np.zeros(T)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "F_kw", "soc_lo", "soc_hi", "slack_total"])
        for t in range(T + 1):
            f = repr(float(result.offsets_kw[t])) if t < T else ""
            s = repr(float(slack[t])) if t < T else ""
            w.writerow([t, f, repr(float(result.soc_pi.soc_lo[t])), repr(float(result.soc_pi.soc_hi[t])), s])


def read_schedule_csv(path: str | Path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    num = lambda v: float(v) if v != "" else float("nan")  # noqa: E731
    return {
        "F_kw": np.array([num(r["F_kw"]) for r in rows[:-1]]),
        "soc_lo": np.array([num(r["soc_lo"]) for r in rows]),
        "soc_hi": np.array([num(r["soc_hi"]) for r in rows]),
        "slack_total": np.array([num(r["slack_total"]) for r in rows[:-1]]),
    }


__all__ = [
    "Mode", "SchedulerConfig", "ScheduleResult", "SchedulerBuildError", "InfeasibleScheduleError",
    "EnvelopeError", "build_spc_problem", "build_dpc_problem", "build_problem", "schedule", "certify",
    "config_for_mode", "power_limits", "complementarity_gap", "shift_warm_start",
    "write_schedule_csv", "read_schedule_csv",
]
