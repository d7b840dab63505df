"""Small dense linear programs with two-sided rows and boxed variables.

Solves ``min c.x`` subject to ``row_lo <= A x <= row_hi`` and
``lo <= x <= hi`` with a bounded-variable primal simplex.  Rows become
equalities ``A x - s = 0`` with boxed surplus variables ``s``; phase one
drives artificial variables out, phase two optimises.  The basis matrix is
refactorised every iteration, which is cheap at the sizes used here (a few
hundred columns, under twenty rows).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PIVOT_TOL = 1e-9
RATIO_TIE = 1e-13


class LPError(Exception):
    pass


class InfeasibleError(LPError):
    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


class UnboundedError(LPError):
    pass


@dataclass
class LPResult:
    x: np.ndarray
    objective: float
    duals: np.ndarray
    dual_bound: float
    iterations: int

    @property
    def gap(self) -> float:
        """Relative gap between the primal optimum and the dual certificate."""
        return abs(self.objective - self.dual_bound) / max(1.0, abs(self.objective))


def dual_bound(c, A, row_lo, row_hi, lo, hi, y) -> float:
    """Lagrangian lower bound ``g(y)`` valid for any multipliers ``y``.

    ``g(y) = sum_i min(y_i lo_i, y_i hi_i) + sum_j min(d_j lo_j, d_j hi_j)``
    with reduced costs ``d = c - A^T y``.  Weak duality makes it a lower
    bound on the primal optimum.
    """
    d = c - A.T @ y
    rows = np.where(y > 0, y * row_lo, np.where(y < 0, y * row_hi, 0.0))
    cols = np.where(d > 0, d * lo, np.where(d < 0, d * hi, 0.0))
    return float(rows.sum() + cols.sum())


class _Simplex:
    def __init__(self, M, lo, hi, cost, tol):
        self.M = M
        self.lo = lo
        self.hi = hi
        self.cost = cost
        self.tol = tol
        self.m, self.n = M.shape

    def solve(self, basis, x, max_iter):
        m = self.m
        M, lo, hi, tol = self.M, self.lo, self.hi, self.tol
        basis = list(basis)
        degenerate = 0
        for it in range(max_iter):
            B = M[:, basis]
            nonbasic = np.ones(self.n, dtype=bool)
            nonbasic[basis] = False
            rhs = -M[:, nonbasic] @ x[nonbasic]
            x[basis] = np.linalg.solve(B, rhs)
            y = np.linalg.solve(B.T, self.cost[basis])
            d = self.cost - M.T @ y
            # a nonbasic variable may enter only with more than tol of room in the improving
            # direction; boxes narrower than tol are treated as fixed
            can_up = nonbasic & (x < hi - tol)
            can_down = nonbasic & (x > lo + tol)
            improve = np.where(can_up & (d < -tol), -d, 0.0) + np.where(can_down & (d > tol), d, 0.0)
            if not np.any(improve > 0):
                return basis, x, y, it
            if degenerate > 50:
                j = int(np.flatnonzero(improve > 0)[0])  # Bland: smallest index
            else:
                j = int(np.argmax(improve))
            direction = 1.0 if d[j] < 0 else -1.0
            w = np.linalg.solve(B, M[:, j]) * direction
            # x_B moves by -t*w as x_j moves by +t*direction
            xb = x[basis]
            lob = lo[basis]
            hib = hi[basis]
            step = hi[j] - x[j] if direction > 0 else x[j] - lo[j]
            leave = -1
            leave_to = 0.0
            piv_tol = PIVOT_TOL * max(1.0, float(np.abs(w).max()))
            best_piv = 0.0
            for r in range(m):
                if w[r] > piv_tol:
                    t = (xb[r] - lob[r]) / w[r]
                    bound = lob[r]
                elif w[r] < -piv_tol:
                    t = (hib[r] - xb[r]) / -w[r]
                    bound = hib[r]
                else:
                    continue
                t = max(t, 0.0)
                if t < step - RATIO_TIE:
                    take = True
                elif leave >= 0 and t <= step + RATIO_TIE:
                    # near tie: Bland picks the smallest index, otherwise the sturdiest pivot
                    take = basis[r] < basis[leave] if degenerate > 50 else abs(w[r]) > best_piv
                else:
                    take = False
                if take:
                    step, leave, leave_to, best_piv = t, r, bound, abs(w[r])
            if not np.isfinite(step):
                raise UnboundedError("objective unbounded")
            degenerate = degenerate + 1 if step <= tol else 0
            if leave < 0:
                x[j] = hi[j] if direction > 0 else lo[j]  # bound flip, basis unchanged
                continue
            x[j] += direction * step
            out = basis[leave]
            basis[leave] = j
            x[out] = leave_to
        raise LPError("simplex iteration limit reached")


def solve_lp(c, A, row_lo, row_hi, lo, hi, tol: float = 1e-11, max_iter: int = 5000) -> LPResult:
    """Minimise ``c.x`` over two-sided rows and finite variable boxes."""
    c = np.asarray(c, dtype=float)
    A = np.atleast_2d(np.asarray(A, dtype=float))
    row_lo = np.asarray(row_lo, dtype=float)
    row_hi = np.asarray(row_hi, dtype=float)
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    m, n = A.shape
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
        raise ValueError("variable bounds must be finite")
    if np.any(lo > hi):
        raise InfeasibleError("variable with lower bound above upper bound")
    bad = np.flatnonzero(row_lo > row_hi)
    if bad.size:
        raise InfeasibleError(f"row {bad[0]} has lower bound above upper bound", row=int(bad[0]))
    if m == 0:
        x = np.where(c > 0, lo, np.where(c < 0, hi, lo))
        obj = float(c @ x)
        return LPResult(x, obj, np.zeros(0), obj, 0)

    # columns: x (n) | surplus s (m) | artificial a (m)
    x0 = np.where(np.abs(lo) <= np.abs(hi), lo, hi).astype(float)
    ax = A @ x0
    s0 = np.clip(ax, row_lo, row_hi)
    resid = ax - s0
    sign = np.where(resid > 0, -1.0, 1.0)
    M = np.hstack([A, -np.eye(m), np.diag(sign)])
    big_lo = np.concatenate([lo, row_lo, np.zeros(m)])
    big_hi = np.concatenate([hi, row_hi, np.full(m, np.inf)])
    x = np.concatenate([x0, s0, np.abs(resid)])
    # satisfied rows start with their surplus basic; violated rows with an artificial
    violated = resid != 0
    big_hi[n + m:][~violated] = 0.0
    basis = [n + m + i if violated[i] else n + i for i in range(m)]
    scale = max(1.0, float(np.abs(A).max()), float(np.max(np.abs(np.concatenate([row_lo[np.isfinite(row_lo)], row_hi[np.isfinite(row_hi)], [0.0]])))))

    phase1 = np.concatenate([np.zeros(n + m), np.ones(m)])
    solver = _Simplex(M, big_lo, big_hi, phase1, tol)
    basis, x, _, it1 = solver.solve(basis, x, max_iter)
    art = x[n + m:]
    if art.sum() > 1e-9 * scale:
        row = int(np.argmax(art))
        raise InfeasibleError(f"constraint row {row} cannot be satisfied", row=row)

    # freeze artificials at zero for phase two
    big_hi[n + m:] = 0.0
    x[n + m:] = 0.0
    cost = np.concatenate([c, np.zeros(2 * m)])
    solver = _Simplex(M, big_lo, big_hi, cost, tol)
    basis, x, y, it2 = solver.solve(basis, x, max_iter)
    xs = np.clip(x[:n], lo, hi)
    # surplus duals are the row multipliers: d_s = 0 - (-y) = y on rows
    obj = float(c @ xs)
    bound = dual_bound(c, A, row_lo, row_hi, lo, hi, y)
    return LPResult(xs, obj, y, bound, it1 + it2)
