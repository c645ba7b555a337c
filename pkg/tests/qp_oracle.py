"""Brute-force active-set enumeration for tiny diagonal QPs (test oracle only)."""

import itertools

import numpy as np


def enumerate_active_sets(w, c, a, lo, hi, feas_tol=1e-9):
    """Global minimizer of sum w x^2 + c x over lo <= A x <= hi by trying every active set."""
    w, c, a = np.asarray(w, float), np.asarray(c, float), np.atleast_2d(np.asarray(a, float))
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    n, m = w.size, lo.size
    best_x, best_f = None, np.inf
    # each row is inactive (0), at its lower bound (1) or at its upper bound (2)
    for pattern in itertools.product((0, 1, 2), repeat=m):
        rows, rhs = [], []
        skip = False
        for i, side in enumerate(pattern):
            if side == 0:
                continue
            b = lo[i] if side == 1 else hi[i]
            if not np.isfinite(b) or (side == 2 and lo[i] == hi[i]):
                skip = True
                break
            rows.append(a[i])
            rhs.append(b)
        if skip or len(rows) > n:
            continue
        h = np.diag(2.0 * w)
        if rows:
            aa = np.array(rows)
            kkt = np.block([[h, aa.T], [aa, np.zeros((len(rows), len(rows)))]])
            rhs_full = np.concatenate([-c, rhs])
            sol, *_ = np.linalg.lstsq(kkt, rhs_full, rcond=None)
            x = sol[:n]
            if np.max(np.abs(aa @ x - np.array(rhs))) > 1e-9:
                continue
        else:
            x = -c / (2.0 * w)
        ax = a @ x
        if np.any(ax < lo - feas_tol) or np.any(ax > hi + feas_tol):
            continue
        f = float(np.dot(w * x, x) + c @ x)
        if f < best_f:
            best_f, best_x = f, x
    return best_x, best_f


def random_feasible_qp(rng, n_max=3, m_max=6):
    n = int(rng.integers(1, n_max + 1))
    m = int(rng.integers(1, m_max + 1))
    w = rng.uniform(0.2, 5.0, n)
    c = rng.normal(0.0, 3.0, n)
    a = rng.normal(0.0, 1.0, (m, n))
    x0 = rng.normal(0.0, 1.0, n)
    ax0 = a @ x0
    lo = ax0 - rng.uniform(0.0, 1.5, m)
    hi = ax0 + rng.uniform(0.0, 1.5, m)
    kind = rng.integers(0, 4, m)
    lo = np.where(kind == 1, -np.inf, lo)
    hi = np.where(kind == 2, np.inf, hi)
    eq = kind == 3
    if eq.sum() < n:
        lo = np.where(eq, ax0, lo)
        hi = np.where(eq, ax0, hi)
    return w, c, a, lo, hi
