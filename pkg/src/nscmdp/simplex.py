"""Dense two-phase tableau simplex for small linear programs.

Solves ``max c^T x  s.t.  A_ub x <= b_ub,  A_eq x = b_eq,  x >= 0``.

Pivoting is deterministic: Dantzig's rule with lowest-index tie breaking,
falling back to Bland's rule after a run of degenerate pivots so the method
cannot cycle. The leaving row is the minimum ratio, ties going to the row whose
basic variable has the lowest index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"

_PIVOT_TOL = 1e-10
_OPT_TOL = 1e-11
_BLAND_AFTER = 30


class LpNumericalError(RuntimeError):
    """The simplex did not converge or returned a point with large residuals."""


@dataclass
class LpResult:
    status: str
    x: np.ndarray | None
    objective: float
    residual: float
    duals_ub: np.ndarray | None = None
    phase1_value: float = 0.0
    iterations: int = 0

    @property
    def feasible(self) -> bool:
        return self.status == OPTIMAL


@njit(cache=True)
def _iterate(T, basis, n_enter, max_iter):
    """Pivot until optimal. Row -1 of T is the reduced-cost row (minimise form).

    Returns (status, iterations): 0 optimal, 1 unbounded, 2 iteration cap.
    """
    m = T.shape[0] - 1
    rhs = T.shape[1] - 1
    degenerate = 0
    for it in range(max_iter):
        col = -1
        if degenerate < _BLAND_AFTER:
            best = -_OPT_TOL
            for j in range(n_enter):
                if T[m, j] < best:
                    best = T[m, j]
                    col = j
        else:
            for j in range(n_enter):
                if T[m, j] < -_OPT_TOL:
                    col = j
                    break
        if col < 0:
            return 0, it
        row = -1
        best_ratio = np.inf
        for i in range(m):
            a = T[i, col]
            if a > _PIVOT_TOL:
                ratio = T[i, rhs] / a
                if row < 0 or ratio < best_ratio - 1e-12:
                    best_ratio = ratio
                    row = i
                elif ratio <= best_ratio + 1e-12 and basis[i] < basis[row]:
                    row = i
        if row < 0:
            return 1, it
        if best_ratio <= 1e-12:
            degenerate += 1
        else:
            degenerate = 0
        piv = T[row, col]
        for j in range(T.shape[1]):
            T[row, j] /= piv
        for i in range(m + 1):
            if i != row:
                f = T[i, col]
                if f != 0.0:
                    for j in range(T.shape[1]):
                        T[i, j] -= f * T[row, j]
        T[row, col] = 1.0
        basis[row] = col
    return 2, max_iter


@njit(cache=True)
def _drive_out_artificials(T, basis, n_real):
    m = T.shape[0] - 1
    for i in range(m):
        if basis[i] >= n_real:
            col = -1
            big = 1e-9
            for j in range(n_real):
                if abs(T[i, j]) > big:
                    big = abs(T[i, j])
                    col = j
            if col >= 0:
                piv = T[i, col]
                for j in range(T.shape[1]):
                    T[i, j] /= piv
                for r in range(m + 1):
                    if r != i:
                        f = T[r, col]
                        if f != 0.0:
                            for j in range(T.shape[1]):
                                T[r, j] -= f * T[i, j]
                basis[i] = col


def solve_lp(c, A_ub=None, b_ub=None, A_eq=None, b_eq=None, tol: float = 1e-8,
             max_iter: int = 50_000) -> LpResult:
    """Maximise ``c @ x`` over the polyhedron; see module docstring."""
    c = np.asarray(c, dtype=float)
    n = len(c)
    A_ub = np.zeros((0, n)) if A_ub is None else np.asarray(A_ub, dtype=float).reshape(-1, n)
    b_ub = np.zeros(0) if b_ub is None else np.asarray(b_ub, dtype=float).ravel()
    A_eq = np.zeros((0, n)) if A_eq is None else np.asarray(A_eq, dtype=float).reshape(-1, n)
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=float).ravel()
    m_ub, m_eq = len(b_ub), len(b_eq)
    m = m_ub + m_eq

    # columns: x | slacks of ub rows | artificials
    ub_neg = b_ub < 0
    need_art = np.concatenate([ub_neg, np.ones(m_eq, dtype=bool)])
    art_rows = np.nonzero(need_art)[0]
    n_art = len(art_rows)
    n_real = n + m_ub
    width = n_real + n_art

    T = np.zeros((m + 1, width + 1))
    sign = np.ones(m)
    sign[:m_ub][ub_neg] = -1.0
    sign[m_ub:][b_eq < 0] = -1.0
    T[:m_ub, :n] = A_ub
    T[:m_ub, n:n_real] = np.eye(m_ub)
    T[m_ub:m, :n] = A_eq
    T[:m, -1] = np.concatenate([b_ub, b_eq])
    T[:m] *= sign[:, None]
    basis = np.empty(m, dtype=np.int64)
    basis[:m_ub] = n + np.arange(m_ub)
    for k, i in enumerate(art_rows):
        T[i, n_real + k] = 1.0
        basis[i] = n_real + k

    phase1 = 0.0
    iters = 0
    if n_art:
        # minimise the sum of artificials: reduced costs = -(sum of artificial rows)
        T[m, :] = -T[art_rows].sum(axis=0)
        T[m, n_real:width] = 0.0
        status, it = _iterate(T, basis, width, max_iter)
        iters += it
        if status == 2:
            raise LpNumericalError(f"phase 1 hit the iteration cap ({max_iter})")
        phase1 = -T[m, -1]
        scale = 1.0 + np.abs(T[:m, -1]).max(initial=0.0)
        if phase1 > max(tol, 1e-9) * scale:
            return LpResult(INFEASIBLE, None, np.nan, np.inf, None, phase1, iters)
        _drive_out_artificials(T, basis, n_real)

    cost = np.zeros(width)
    cost[:n] = c
    T[m, :] = 0.0
    T[m, :width] = -cost
    for i in range(m):
        cb = cost[basis[i]]
        if cb != 0.0:
            T[m] += cb * T[i]
    status, it = _iterate(T, basis, n_real, max_iter)
    iters += it
    if status == 1:
        return LpResult(UNBOUNDED, None, np.inf, np.nan, None, phase1, iters)
    if status == 2:
        raise LpNumericalError(f"phase 2 hit the iteration cap ({max_iter})")

    xs = np.zeros(width)
    xs[basis] = T[:m, -1]
    xs = _refine(A_ub, A_eq, b_ub, b_eq, basis, xs, n, m_ub, n_real)
    x = np.clip(xs[:n], 0.0, None)
    residual = _residual(x, A_ub, b_ub, A_eq, b_eq)
    if residual > max(tol, 1e-7) * (1.0 + np.abs(np.concatenate([b_ub, b_eq])).max(initial=0.0)):
        raise LpNumericalError(
            f"primal residual {residual:.3e} exceeds tolerance; "
            f"problem size {m}x{n}, max |A| = {max(np.abs(A_ub).max(initial=0), np.abs(A_eq).max(initial=0)):.3e}"
        )
    duals = T[m, n:n_real].copy()
    return LpResult(OPTIMAL, x, float(c @ x), residual, duals, phase1, iters)


def _refine(A_ub, A_eq, b_ub, b_eq, basis, xs, n, m_ub, n_real):
    """Recompute the basic solution from the original data to shed pivot round-off."""
    m = len(basis)
    if m == 0 or np.any(basis >= n_real):
        return xs
    A = np.zeros((m, n_real))
    A[:m_ub, :n] = A_ub
    A[:m_ub, n:n_real] = np.eye(m_ub)
    A[m_ub:, :n] = A_eq
    B = A[:, basis]
    try:
        xb = np.linalg.solve(B, np.concatenate([b_ub, b_eq]))
    except np.linalg.LinAlgError:
        return xs
    if not np.all(np.isfinite(xb)) or np.max(np.abs(xb - xs[basis])) > 1e-6:
        return xs
    out = xs.copy()
    out[basis] = xb
    return out


def _residual(x, A_ub, b_ub, A_eq, b_eq) -> float:
    r = 0.0
    if len(b_ub):
        r = max(r, float(np.max(A_ub @ x - b_ub, initial=0.0)))
    if len(b_eq):
        r = max(r, float(np.max(np.abs(A_eq @ x - b_eq))))
    return r
