"""Operator-splitting (ADMM) solver for diagonal-Hessian convex QPs.

Solves::

    minimize    sum_i w_i x_i^2 + c'x
    subject to  l <= A x <= u

with w > 0.  The iteration follows the OSQP scheme: Ruiz equilibration,
over-relaxed ADMM on the two-sided constraint form, adaptive per-row penalty,
a primal-infeasibility certificate and a final active-set polish that
refines the ADMM iterate to KKT accuracy when it can certify the active set.

Duals are reported with the convention ``2*diag(w)*x + c = A' * lam``:
``lam_i >= 0`` when a lower bound is active and ``lam_i <= 0`` when an
upper bound is active.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

SOLVED = "solved"
MAX_ITER = "max_iter"
INFEASIBLE = "infeasible"

RHO_MIN, RHO_MAX = 1e-6, 1e6
EQ_RHO_FACTOR = 1e3


@dataclass
class QuadraticProgram:
    hessian_diag: np.ndarray
    linear_cost: np.ndarray
    ineq_matrix: np.ndarray
    ineq_lower: np.ndarray
    ineq_upper: np.ndarray

    def __post_init__(self):
        self.hessian_diag = np.asarray(self.hessian_diag, dtype=float).reshape(-1)
        self.linear_cost = np.asarray(self.linear_cost, dtype=float).reshape(-1)
        a = self.ineq_matrix
        a = a.toarray() if sp.issparse(a) else np.asarray(a, dtype=float)
        if a.ndim == 1:
            a = a.reshape(1, -1)
        self.ineq_matrix = a
        self.ineq_lower = np.asarray(self.ineq_lower, dtype=float).reshape(-1)
        self.ineq_upper = np.asarray(self.ineq_upper, dtype=float).reshape(-1)
        n, m = self.hessian_diag.size, self.ineq_lower.size
        if self.linear_cost.size != n or a.shape != (m, n) or self.ineq_upper.size != m:
            raise ValueError(f"inconsistent QP dimensions: n={n}, m={m}, A{a.shape}")
        if np.any(~(self.hessian_diag > 0)):
            raise ValueError("hessian_diag must be strictly positive")
        if np.any(self.ineq_lower > self.ineq_upper):
            raise ValueError("ineq_lower must not exceed ineq_upper")

    @property
    def n(self) -> int:
        return self.hessian_diag.size

    @property
    def m(self) -> int:
        return self.ineq_lower.size

    def objective(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(np.dot(self.hessian_diag * x, x) + np.dot(self.linear_cost, x))

    def dump(self) -> str:
        """Plain-text listing: dimensions, cost, triplet-listed A and row bounds."""
        out = [f"qp n={self.n} m={self.m}"]
        out += [f"w {i} {float(v)!r}" for i, v in enumerate(self.hessian_diag)]
        out += [f"c {i} {float(v)!r}" for i, v in enumerate(self.linear_cost) if v != 0.0]
        rows, cols = np.nonzero(self.ineq_matrix)
        out += [f"A {r} {c} {float(self.ineq_matrix[r, c])!r}" for r, c in zip(rows, cols)]
        out += [f"b {i} {float(lo)!r} {float(hi)!r}" for i, (lo, hi) in enumerate(zip(self.ineq_lower, self.ineq_upper))]
        return "\n".join(out) + "\n"

    @classmethod
    def from_dump(cls, text: str) -> "QuadraticProgram":
        lines = text.strip().splitlines()
        _, ns, ms = lines[0].split()
        n, m = int(ns.split("=")[1]), int(ms.split("=")[1])
        w, c = np.zeros(n), np.zeros(n)
        a = np.zeros((m, n))
        lo, hi = np.zeros(m), np.zeros(m)
        for ln in lines[1:]:
            tag, *rest = ln.split()
            if tag == "w":
                w[int(rest[0])] = float(rest[1])
            elif tag == "c":
                c[int(rest[0])] = float(rest[1])
            elif tag == "A":
                a[int(rest[0]), int(rest[1])] = float(rest[2])
            elif tag == "b":
                lo[int(rest[0])], hi[int(rest[0])] = float(rest[1]), float(rest[2])
        return cls(w, c, a, lo, hi)


@dataclass
class QpSolution:
    x: np.ndarray
    status: str
    primal_residual: float
    dual_residual: float
    iterations: int
    duals: np.ndarray
    objective: float
    polished: bool = False


@dataclass
class SolverSettings:
    tol_abs: float = 1e-6
    tol_rel: float = 1e-6
    max_iter: int = 100_000
    rho: float = 0.1
    sigma: float = 1e-6
    alpha: float = 1.6
    adaptive_rho_interval: int = 25
    scaling_iters: int = 10
    polish: bool = True
    polish_delta: float = 1e-9
    polish_refine: int = 5
    polish_interval: int = 10
    polish_passes: int = 20
    polish_active_tol: float = 1e-7
    polish_trigger: float = 1e9
    eps_prim_inf: float = 1e-3
    infeasibility_interval: int = 25
    # ADMM iterations before an interior-point attempt; None disables it
    ipm_after: int | None = 500
    ipm_max_iter: int = 80


def kkt_residuals(problem: QuadraticProgram, x, duals) -> tuple[float, float]:
    """Infinity norms of bound violation and of the stationarity residual."""
    x = np.asarray(x, dtype=float)
    lam = np.asarray(duals, dtype=float)
    ax = problem.ineq_matrix @ x
    viol = np.maximum(problem.ineq_lower - ax, 0.0) + np.maximum(ax - problem.ineq_upper, 0.0)
    stat = 2.0 * problem.hessian_diag * x + problem.linear_cost - problem.ineq_matrix.T @ lam
    return float(np.max(viol, initial=0.0)), float(np.max(np.abs(stat), initial=0.0))


def _inf_norm(v) -> float:
    return float(np.max(np.abs(v), initial=0.0))


@dataclass
class _Scaled:
    p: np.ndarray  # diagonal of the scaled quadratic form (P = 2 diag(w))
    q: np.ndarray
    a: np.ndarray
    l: np.ndarray
    u: np.ndarray
    d: np.ndarray  # variable scaling
    e: np.ndarray  # constraint scaling
    c: float  # cost scaling


def _ruiz(problem: QuadraticProgram, iters: int) -> _Scaled:
    p = 2.0 * problem.hessian_diag.copy()
    q = problem.linear_cost.copy()
    a = problem.ineq_matrix.copy()
    n, m = problem.n, problem.m
    d, e = np.ones(n), np.ones(m)
    for _ in range(iters):
        col = np.maximum(np.abs(p), np.max(np.abs(a), axis=0, initial=0.0)) if m else np.abs(p)
        row = np.max(np.abs(a), axis=1, initial=0.0)
        dd = 1.0 / np.sqrt(np.clip(np.where(col > 1e-4, col, 1.0), 1e-4, 1e4))
        ee = 1.0 / np.sqrt(np.clip(np.where(row > 1e-4, row, 1.0), 1e-4, 1e4))
        p *= dd * dd
        q *= dd
        a = ee[:, None] * a * dd[None, :]
        d *= dd
        e *= ee
    cost_norm = max(float(np.mean(np.abs(p))), _inf_norm(q))
    c = 1.0 / min(max(cost_norm, 1e-4), 1e4) if cost_norm > 1e-4 else 1.0
    with np.errstate(invalid="ignore"):
        l = np.where(np.isfinite(problem.ineq_lower), problem.ineq_lower * e, -np.inf)
        u = np.where(np.isfinite(problem.ineq_upper), problem.ineq_upper * e, np.inf)
    return _Scaled(p * c, q * c, a, l, u, d, e, c)


class QpSolver:
    """Holds the workspace for one solve at a time; not reentrant."""

    def __init__(self, settings: SolverSettings | None = None):
        self.settings = settings or SolverSettings()

    def solve(self, problem: QuadraticProgram, warm_start: tuple[np.ndarray, np.ndarray] | None = None) -> QpSolution:
        st = self.settings
        sc = _ruiz(problem, st.scaling_iters)
        n, m = problem.n, problem.m
        a, l, u = sc.a, sc.l, sc.u

        x = np.zeros(n)
        z = np.zeros(m)
        y = np.zeros(m)
        if warm_start is not None:
            x0, lam0 = warm_start
            if x0 is not None and np.size(x0) == n:
                x = np.asarray(x0, dtype=float) / sc.d
                z = np.clip(a @ x, l, u)
            if lam0 is not None and np.size(lam0) == m:
                y = -np.asarray(lam0, dtype=float) * sc.c / sc.e

        eq = (u - l) < 1e-8
        free = np.isinf(l) & np.isinf(u)

        def rho_vec(rho):
            r = np.full(m, rho)
            r[eq] = min(rho * EQ_RHO_FACTOR, RHO_MAX)
            r[free] = RHO_MIN
            return r

        rho = st.rho
        rv = rho_vec(rho)

        def factor(rv):
            k = np.diag(sc.p + st.sigma) + a.T @ (rv[:, None] * a)
            return sla.cho_factor(k, lower=True, check_finite=False)

        fac = factor(rv)
        status = MAX_ITER
        it = 0
        y_prev = y.copy()
        next_polish = st.polish_interval
        strikes = 0
        for it in range(1, st.max_iter + 1):
            rhs = st.sigma * x - sc.q + a.T @ (rv * z - y)
            xt = sla.cho_solve(fac, rhs, check_finite=False)
            zt = a @ xt
            x = st.alpha * xt + (1.0 - st.alpha) * x
            zr = st.alpha * zt + (1.0 - st.alpha) * z
            z_new = np.clip(zr + y / rv, l, u)
            y = y + rv * (zr - z_new)
            z = z_new

            ax = a @ x
            aty = a.T @ y
            px = sc.p * x
            r_prim = _inf_norm((ax - z) / sc.e)
            r_dual = _inf_norm((px + sc.q + aty) / sc.d) / sc.c
            eps_p = st.tol_abs + st.tol_rel * max(_inf_norm(ax / sc.e), _inf_norm(z / sc.e))
            eps_d = st.tol_abs + st.tol_rel * max(_inf_norm(px / sc.d), _inf_norm(aty / sc.d), _inf_norm(sc.q / sc.d)) / sc.c
            if r_prim <= eps_p and r_dual <= eps_d:
                status = SOLVED
                break
            if (st.polish and it >= next_polish
                    and r_prim <= st.polish_trigger * eps_p and r_dual <= st.polish_trigger * eps_d):
                early = self._certified_polish(problem, sc, x, z, y, eps_p, eps_d, it)
                if early is not None:
                    return early
                # failed attempts get geometrically rarer
                next_polish = it + max(st.polish_interval, it // 2)

            if st.ipm_after is not None and it == st.ipm_after:
                rescue = self._certified_interior_point(problem, sc, x, eps_p, eps_d, it)
                if rescue is not None:
                    return rescue

            if it % st.infeasibility_interval == 0:
                # the certificate must hold on two consecutive checks
                strikes = strikes + 1 if self._primal_infeasible(sc, y - y_prev) else 0
                if strikes >= 2:
                    # a certified polish overrides a premature certificate
                    if st.polish:
                        rescue = self._certified_polish(problem, sc, x, z, y, eps_p, eps_d, it)
                        if rescue is not None:
                            return rescue
                    if st.ipm_after is not None:
                        rescue = self._certified_interior_point(problem, sc, x, eps_p, eps_d, it)
                        if rescue is not None:
                            return rescue
                    status = INFEASIBLE
                    break
                y_prev = y.copy()

            if st.adaptive_rho_interval and it % st.adaptive_rho_interval == 0:
                num = _inf_norm(ax - z) / max(_inf_norm(ax), _inf_norm(z), 1e-30)
                den = _inf_norm(px + sc.q + aty) / max(_inf_norm(px), _inf_norm(aty), _inf_norm(sc.q), 1e-30)
                if den > 0 and num > 0:
                    new_rho = float(np.clip(rho * np.sqrt(num / den), RHO_MIN, RHO_MAX))
                    if new_rho > 5.0 * rho or new_rho < 0.2 * rho:
                        rho = new_rho
                        rv = rho_vec(rho)
                        fac = factor(rv)

        x_out = x * sc.d
        lam = -y * sc.e / sc.c
        if status == INFEASIBLE:
            pr, du = kkt_residuals(problem, x_out, lam)
            return QpSolution(x_out, status, pr, du, it, lam, problem.objective(x_out))

        pr, du = kkt_residuals(problem, x_out, lam)
        sol = QpSolution(x_out, status, pr, du, it, lam, problem.objective(x_out))
        if st.polish:
            pol = self._polish(problem, sc, x, z, y)
            if pol is not None:
                pp, pd = kkt_residuals(problem, *pol)
                if pp <= max(pr, 1e-9) and pd <= max(du, 1e-9):
                    xs, ls = pol
                    sol = QpSolution(xs, status, pp, pd, it, ls, problem.objective(xs), polished=True)
        return sol

    def _certified_polish(self, problem, sc, x, z, y, eps_p, eps_d, it) -> QpSolution | None:
        """Polish mid-run and accept only if the result meets the termination tolerances."""
        pol = self._polish(problem, sc, x, z, y)
        if pol is None:
            return None
        pp, pd = kkt_residuals(problem, *pol)
        if pp <= eps_p and pd <= eps_d:
            xs, ls = pol
            return QpSolution(xs, SOLVED, pp, pd, it, ls, problem.objective(xs), polished=True)
        return None

    def _certified_interior_point(self, problem, sc, x, eps_p, eps_d, it) -> QpSolution | None:
        """Interior-point fallback for runs where ADMM stalls (e.g. large slack penalties).

        Its point seeds the active-set polish; either result is returned only
        if it meets the termination tolerances.
        """
        res = _interior_point(sc, x, self.settings.ipm_max_iter)
        if res is None:
            return None
        xs, ys = res
        if self.settings.polish:
            pol = self._certified_polish(problem, sc, xs, sc.a @ xs, ys, eps_p, eps_d, it)
            if pol is not None:
                return pol
        x_out, lam = xs * sc.d, -ys * sc.e / sc.c
        pp, pd = kkt_residuals(problem, x_out, lam)
        if pp <= eps_p and pd <= eps_d:
            return QpSolution(x_out, SOLVED, pp, pd, it, lam, problem.objective(x_out))
        return None

    def _primal_infeasible(self, sc: _Scaled, dy: np.ndarray) -> bool:
        """Farkas test on the dual step: A'dy ~ 0 while the bound support is negative.

        A certificate in either the scaled or the original coordinates proves
        infeasibility; testing both avoids a badly scaled row set hiding it.
        """
        return self._farkas(dy, sc.a, sc.l, sc.u, np.ones(sc.d.size)) or \
            self._farkas(dy * sc.e, sc.a, sc.l / sc.e, sc.u / sc.e, sc.d, scaled_dy=dy)

    def _farkas(self, dy, a, l, u, d, scaled_dy=None) -> bool:
        eps = self.settings.eps_prim_inf
        norm = _inf_norm(dy)
        if norm < 1e-12:
            return False
        dyn = dy / norm
        pos, neg = np.maximum(dyn, 0.0), np.minimum(dyn, 0.0)
        if np.any((pos > eps) & np.isinf(u)) or np.any((neg < -eps) & np.isinf(l)):
            return False
        support = float(np.sum(np.where(np.isfinite(u), u, 0.0) * pos) + np.sum(np.where(np.isfinite(l), l, 0.0) * neg))
        # A' dy in the same coordinates as dy: a is scaled, so undo D when dy is unscaled
        sdy = dyn if scaled_dy is None else scaled_dy / norm
        at_dy = _inf_norm((a.T @ sdy) / d)
        return at_dy < eps and support < -eps

    def _polish(self, problem, sc: _Scaled, x, z, y):
        """Refine the active set guessed from the ADMM iterate; None unless certified.

        Each pass solves the equality KKT system of the current guess, then
        adds the rows the resulting point violates or, once it is feasible,
        drops rows whose multiplier has the wrong sign.  The point is returned
        only once it is feasible with correctly signed multipliers.
        """
        st = self.settings
        a, lo, hi = problem.ineq_matrix, problem.ineq_lower, problem.ineq_upper
        eq = (hi - lo) < 1e-12
        # rows the iterate sits on count as active even with a vanishing multiplier
        near = st.polish_active_tol * (1.0 + np.abs(z))
        lower = ((z - sc.l) < np.maximum(-y, near)) | eq
        upper = ((sc.u - z) < np.maximum(y, near)) & ~lower
        feas_tol = 1e-10 * (1.0 + np.where(np.isfinite(lo), np.abs(lo), 0.0) + np.where(np.isfinite(hi), np.abs(hi), 0.0))
        seen = set()
        for _ in range(st.polish_passes):
            key = (lower.tobytes(), upper.tobytes())
            if key in seen:
                return None
            seen.add(key)
            res = self._solve_active(problem, lower, upper)
            if res is None:
                return None
            xs, ys = res
            ax = a @ xs
            sign_tol = 1e-9 * max(1.0, _inf_norm(ys))
            bad_lo = lower & ~eq & (ys > sign_tol)
            bad_hi = upper & ~eq & (ys < -sign_tol)
            viol_lo = ~(lower | upper) & (ax < lo - feas_tol)
            viol_hi = ~(lower | upper) & (ax > hi + feas_tol)
            if not (bad_lo.any() or bad_hi.any() or viol_lo.any() or viol_hi.any()):
                return xs, -ys
            # repair feasibility before releasing rows; swapping both at once
            # oscillates on nearly flat directions
            if viol_lo.any() or viol_hi.any():
                lower |= viol_lo
                upper |= viol_hi
            else:
                lower &= ~bad_lo
                upper &= ~bad_hi
        return None

    def _solve_active(self, problem, lower, upper):
        st = self.settings
        act = np.flatnonzero(lower | upper)
        pdiag = 2.0 * problem.hessian_diag
        b = np.where(lower, problem.ineq_lower, problem.ineq_upper)[act]
        aa = problem.ineq_matrix[act]
        n, k = problem.n, act.size
        kkt = np.zeros((n + k, n + k))
        kkt[:n, :n] = np.diag(pdiag)
        kkt[:n, n:] = aa.T
        kkt[n:, :n] = aa
        reg = kkt.copy()
        reg[np.arange(n), np.arange(n)] += st.polish_delta
        reg[n + np.arange(k), n + np.arange(k)] -= st.polish_delta
        rhs = np.concatenate([-problem.linear_cost, b])
        try:
            lu = sla.lu_factor(reg, check_finite=False)
        except (ValueError, sla.LinAlgError):
            return None
        sol = sla.lu_solve(lu, rhs, check_finite=False)
        for _ in range(st.polish_refine):
            sol = sol + sla.lu_solve(lu, rhs - kkt @ sol, check_finite=False)
        if not np.all(np.isfinite(sol)):
            return None
        ys = np.zeros(problem.m)
        ys[act] = sol[n:]
        return sol[:n], ys


# divergent iterates are caught by the finiteness check below
@np.errstate(over="ignore", invalid="ignore", divide="ignore")
def _interior_point(sc: _Scaled, x0: np.ndarray, max_iter: int, tol: float = 1e-10):
    """Mehrotra predictor-corrector on the scaled problem.

    Returns ``(x, y)`` in scaled coordinates with ``y`` in the ADMM sign
    convention (p*x + q + A'y = 0), or None if the iteration breaks down.
    """
    a, l, u, p, q = sc.a, sc.l, sc.u, sc.p, sc.q
    n = p.size
    eq = (u - l) < 1e-8
    up = np.isfinite(u) & ~eq
    lo = np.isfinite(l) & ~eq
    e_mat, b_eq = a[eq], 0.5 * (l[eq] + u[eq])
    g = np.vstack([a[up], -a[lo]])
    h = np.concatenate([u[up], -l[lo]])
    me, mi = e_mat.shape[0], g.shape[0]
    x = np.asarray(x0, dtype=float).copy()
    s = np.maximum(h - g @ x, 1.0)
    z = np.ones(mi)
    y = np.zeros(me)
    scale = 1.0 + max(_inf_norm(q), _inf_norm(h), _inf_norm(b_eq))
    delta = 1e-12

    for _ in range(max_iter):
        r_d = p * x + q + g.T @ z + e_mat.T @ y
        r_e = e_mat @ x - b_eq
        r_i = g @ x + s - h
        mu = float(s @ z) / mi if mi else 0.0
        if max(_inf_norm(r_d), _inf_norm(r_e), _inf_norm(r_i)) <= tol * scale and mu <= tol * scale:
            break
        w = z / s
        k = np.zeros((n + me, n + me))
        k[:n, :n] = np.diag(p) + g.T @ (w[:, None] * g)
        k[:n, n:] = e_mat.T
        k[n:, :n] = e_mat
        k[n:, n:] = -delta * np.eye(me)
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("error", sla.LinAlgWarning)
                lu = sla.lu_factor(k, check_finite=False)
        except (ValueError, sla.LinAlgError, sla.LinAlgWarning):
            return None

        def direction(r_c):
            rhs = np.concatenate([-r_d - g.T @ ((z * r_i - r_c) / s), -r_e])
            sol = sla.lu_solve(lu, rhs, check_finite=False)
            dx, dy = sol[:n], sol[n:]
            ds = -r_i - g @ dx
            dz = (-r_c - z * ds) / s
            return dx, dy, ds, dz

        def max_step(v, dv):
            neg = dv < 0
            return min(1.0, float(np.min(-v[neg] / dv[neg]))) if neg.any() else 1.0

        dx, dy, ds, dz = direction(s * z)
        a_aff = min(max_step(s, ds), max_step(z, dz))
        mu_aff = float((s + a_aff * ds) @ (z + a_aff * dz)) / mi if mi else 0.0
        sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
        dx, dy, ds, dz = direction(s * z + ds * dz - sigma * mu)
        step = 0.99 * min(max_step(s, ds), max_step(z, dz))
        x, y, s, z = x + step * dx, y + step * dy, s + step * ds, z + step * dz
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(z))):
            return None

    ys = np.zeros(a.shape[0])
    nu = int(up.sum())
    ys[up] += z[:nu]
    ys[lo] -= z[nu:]
    ys[eq] += y
    return x, ys


def solve(problem: QuadraticProgram, tol_abs: float = 1e-6, tol_rel: float = 1e-6,
          max_iter: int = 100_000, warm_start=None, **settings) -> QpSolution:
    st = SolverSettings(tol_abs=tol_abs, tol_rel=tol_rel, max_iter=max_iter, **settings)
    return QpSolver(st).solve(problem, warm_start)
