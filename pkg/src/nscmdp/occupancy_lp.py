"""Occupancy-measure polytopes and the linear programs solved over them.

Two polytope modes are supported:

* ``exact``: the occupancy measures of a known transition function. The LP
  variables are the pair marginals q(x, a); triples follow as q(x, a) P(x'|x, a).
* ``confidence``: occupancy measures compatible with some transition function
  inside an entrywise confidence box around an empirical estimate. The LP
  variables are the triples q(x, a, x').
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .cmdp import Layout, LoopFreeCmdp, OccupancyMeasure
from .simplex import INFEASIBLE, OPTIMAL, LpResult, solve_lp

LP_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class PolytopeSpec:
    layout: Layout
    mode: str
    p3: np.ndarray
    eps: np.ndarray | None = None

    @classmethod
    def exact(cls, cmdp: LoopFreeCmdp) -> "PolytopeSpec":
        return cls(cmdp.layout, "exact", cmdp.p3)

    @classmethod
    def confidence(cls, layout: Layout, p_bar, eps) -> "PolytopeSpec":
        return cls(layout, "confidence", np.asarray(p_bar, dtype=float),
                   np.asarray(eps, dtype=float))

    @property
    def n_vars(self) -> int:
        return self.layout.n_pairs if self.mode == "exact" else self.layout.n_triples

    @cached_property
    def upper(self) -> np.ndarray:
        """Bracket upper bounds intersected with [0, 1] (confidence mode)."""
        return np.clip(self.p3 + self.eps, 0.0, 1.0)

    @cached_property
    def lower(self) -> np.ndarray:
        return np.clip(self.p3 - self.eps, 0.0, 1.0)

    @cached_property
    def to_pairs(self) -> np.ndarray:
        """Matrix mapping LP variables to the pair marginals q2."""
        if self.mode == "exact":
            return np.eye(self.layout.n_pairs)
        return self.layout.pair_to_triples

    @cached_property
    def structure(self):
        """(A_eq, b_eq, A_ub, b_ub) of the polytope itself."""
        lay = self.layout
        if self.mode == "exact":
            return _exact_structure(lay, self.p3)
        if self.mode == "confidence":
            return _confidence_structure(lay, self.lower, self.upper)
        raise ValueError(f"unknown polytope mode {self.mode!r}")

    def occupancy(self, x: np.ndarray) -> OccupancyMeasure:
        lay = self.layout
        if self.mode == "exact":
            return OccupancyMeasure(lay, x[lay.tri_pair] * self.p3)
        return OccupancyMeasure(lay, x.copy())

    def variables_of(self, q: OccupancyMeasure) -> np.ndarray:
        return q.q2 if self.mode == "exact" else q.q3

    def contains(self, q: OccupancyMeasure, tol: float = 1e-8) -> bool:
        """Membership test for an occupancy measure given on triples."""
        lay = self.layout
        q3 = q.q3
        if np.min(q3, initial=0.0) < -tol:
            return False
        q2 = q.q2[lay.tri_pair]
        mass = np.bincount(lay.tri_layer, weights=q3, minlength=lay.horizon)
        if np.max(np.abs(mass - 1.0)) > tol:
            return False
        out = np.bincount(lay.tri_x, weights=q3, minlength=lay.n_states)
        inn = np.bincount(lay.tri_xn, weights=q3, minlength=lay.n_states)
        internal = slice(lay.layer_start[1], lay.layer_start[lay.horizon])
        if np.max(np.abs(out[internal] - inn[internal]), initial=0.0) > tol:
            return False
        if self.mode == "exact":
            return bool(np.max(np.abs(q3 - self.p3 * q2)) <= tol)
        return bool(np.all(q3 <= self.upper * q2 + tol) and np.all(q3 >= self.lower * q2 - tol))


def _exact_structure(lay: Layout, p3: np.ndarray):
    # unit root mass plus flow conservation on pair marginals
    n_in = lay.layer_start[lay.horizon] - 1
    A_eq = np.zeros((1 + n_in, lay.n_pairs))
    A_eq[0, : lay.n_actions] = 1.0
    for x in range(1, lay.layer_start[lay.horizon]):
        row = x
        A_eq[row, x * lay.n_actions:(x + 1) * lay.n_actions] = 1.0
    internal = lay.tri_xn < lay.terminal
    np.add.at(A_eq, (lay.tri_xn[internal], lay.tri_pair[internal]), -p3[internal])
    b_eq = np.zeros(1 + n_in)
    b_eq[0] = 1.0
    return A_eq, b_eq, np.zeros((0, lay.n_pairs)), np.zeros(0)


def _flow_rows(lay: Layout) -> tuple[np.ndarray, np.ndarray]:
    n_int = lay.layer_start[lay.horizon] - 1
    A = np.zeros((1 + n_int, lay.n_triples))
    A[0, lay.tri_layer == 0] = 1.0
    out = lay.tri_x >= 1
    A[lay.tri_x[out], np.nonzero(out)[0]] += 1.0
    inn = lay.tri_xn < lay.terminal
    A[lay.tri_xn[inn], np.nonzero(inn)[0]] -= 1.0
    b = np.zeros(1 + n_int)
    b[0] = 1.0
    return A, b


_FLOW_CACHE: dict = {}


def _confidence_structure(lay: Layout, lower: np.ndarray, upper: np.ndarray):
    key = lay
    if key not in _FLOW_CACHE:
        _FLOW_CACHE[key] = _flow_rows(lay)
    A_eq, b_eq = _FLOW_CACHE[key]
    sums = lay.pair_to_triples[lay.tri_pair]  # (n_tri, n_tri): row i sums triples of i's pair
    eye = np.eye(lay.n_triples)
    up = upper < 1.0
    lo = lower > 0.0
    A_ub = np.vstack([
        eye[up] - upper[up, None] * sums[up],
        lower[lo, None] * sums[lo] - eye[lo],
    ])
    return A_eq, b_eq, A_ub, np.zeros(len(A_ub))


@dataclass
class LpSolution:
    status: str
    q: OccupancyMeasure | None
    objective: float
    duals: np.ndarray | None
    residual: float
    phase1_value: float = 0.0
    extra: np.ndarray | None = None

    @property
    def feasible(self) -> bool:
        return self.status == OPTIMAL


@dataclass
class LinearProgram:
    """max c^T x, A_ub x <= b_ub, A_eq x = b_eq, x >= 0 with optional names."""

    c: np.ndarray
    A_ub: np.ndarray
    b_ub: np.ndarray
    A_eq: np.ndarray
    b_eq: np.ndarray
    var_names: list | None = None
    ub_names: list | None = None
    eq_names: list | None = None

    def solve(self, tol: float = LP_TOL) -> LpResult:
        return solve_lp(self.c, self.A_ub, self.b_ub, self.A_eq, self.b_eq, tol=tol)


def _pad(A: np.ndarray, extra: int) -> np.ndarray:
    return np.hstack([A, np.zeros((A.shape[0], extra))]) if extra else A


def build_problem(poly: PolytopeSpec, r, G=None, alpha=None, extra_cols: int = 0) -> LinearProgram:
    """Objective r^T q over the polytope with optional rows G^T q <= alpha.

    ``extra_cols`` appends zero columns that the caller fills in (slacks for
    the positive Lagrangian, the margin variable for the feasibility LP).
    """
    A_eq, b_eq, A_ub_s, b_ub_s = poly.structure
    M = poly.to_pairs
    c = np.concatenate([np.asarray(r, dtype=float) @ M, np.zeros(extra_cols)])
    rows = [_pad(A_ub_s, extra_cols)]
    rhs = [b_ub_s]
    if G is not None:
        G = np.asarray(G, dtype=float).reshape(poly.layout.n_pairs, -1)
        rows.append(_pad(G.T @ M, extra_cols))
        rhs.append(np.asarray(alpha, dtype=float).ravel())
    return LinearProgram(c, np.vstack(rows), np.concatenate(rhs), _pad(A_eq, extra_cols), b_eq)


def _n_cost_rows(G, poly) -> int:
    return 0 if G is None else np.asarray(G).reshape(poly.layout.n_pairs, -1).shape[1]


def solve_opt(poly: PolytopeSpec, r, G, alpha, tol: float = LP_TOL) -> LpSolution:
    """max r^T q over the polytope subject to G^T q <= alpha."""
    lp = build_problem(poly, r, G, alpha)
    res = lp.solve(tol)
    return _wrap(poly, res, _n_cost_rows(G, poly))


def solve_opt_cb(conf_poly: PolytopeSpec, r_bar, G_under, alpha, tol: float = LP_TOL) -> LpSolution:
    """Optimistic program: upper reward bounds, lower cost bounds, confidence polytope."""
    if conf_poly.mode != "confidence":
        raise ValueError("the optimistic program needs a confidence-mode polytope")
    return solve_opt(conf_poly, r_bar, G_under, alpha, tol)


def structural_point(poly: PolytopeSpec, tol: float = LP_TOL) -> LpSolution:
    """Deterministic feasible point of the polytope (phase-1 vertex)."""
    lp = build_problem(poly, np.zeros(poly.layout.n_pairs))
    return _wrap(poly, lp.solve(tol), 0)


def feasibility_rho(poly: PolytopeSpec, G, alpha, tol: float = LP_TOL) -> float:
    """max s s.t. G^T q + s <= alpha; s is split into two nonnegative parts."""
    lp = build_problem(poly, np.zeros(poly.layout.n_pairs), G, alpha, extra_cols=2)
    n = poly.n_vars
    n_struct = len(poly.structure[3])
    lp.c[n], lp.c[n + 1] = 1.0, -1.0
    lp.A_ub[n_struct:, n] = 1.0
    lp.A_ub[n_struct:, n + 1] = -1.0
    res = lp.solve(tol)
    if res.status != OPTIMAL:
        raise RuntimeError(f"feasibility LP returned {res.status}")
    return float(res.x[n] - res.x[n + 1])


def solve_positive_lagrangian(poly: PolytopeSpec, r, G, alpha, beta: float,
                              tol: float = LP_TOL) -> LpSolution:
    """max r^T q - beta * sum_i [G_i^T q - alpha_i]^+ via epigraph slacks."""
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    G = np.asarray(G, dtype=float).reshape(poly.layout.n_pairs, -1)
    m = G.shape[1]
    lp = build_problem(poly, r, G, alpha, extra_cols=m)
    n = poly.n_vars
    n_struct = len(poly.structure[3])
    lp.c[n:] = -beta
    lp.A_ub[n_struct:, n:] = -np.eye(m)
    res = lp.solve(tol)
    sol = _wrap(poly, res, m)
    if res.status == OPTIMAL:
        sol.extra = res.x[n:]
    return sol


def lagrangian_max(poly: PolytopeSpec, r, G, alpha, lam, tol: float = LP_TOL) -> float:
    """max_q r^T q - lam^T (G^T q - alpha) over the polytope."""
    G = np.asarray(G, dtype=float).reshape(poly.layout.n_pairs, -1)
    lam = np.asarray(lam, dtype=float)
    lp = build_problem(poly, np.asarray(r, dtype=float) - G @ lam)
    res = lp.solve(tol)
    if res.status != OPTIMAL:
        raise RuntimeError(f"Lagrangian LP returned {res.status}")
    return float(res.objective + lam @ np.asarray(alpha, dtype=float))


def _wrap(poly: PolytopeSpec, res: LpResult, m: int) -> LpSolution:
    if res.status != OPTIMAL:
        return LpSolution(res.status, None, res.objective, None, res.residual, res.phase1_value)
    n = poly.n_vars
    q = poly.occupancy(res.x[:n])
    duals = res.duals_ub[len(res.duals_ub) - m:] if m else None
    return LpSolution(OPTIMAL, q, float(res.objective), duals, res.residual, res.phase1_value)


def write_lp_file(lp: LinearProgram, path) -> None:
    """Dump the program in CPLEX LP text format for cross-checking."""
    names = lp.var_names or [f"x{j}" for j in range(len(lp.c))]

    def expr(row):
        terms = [f"{'+' if v >= 0 else '-'} {abs(v):.17g} {names[j]}" for j, v in enumerate(row) if v != 0]
        return " ".join(terms) if terms else "0 " + names[0]

    lines = ["\\ generated by nscmdp", "Maximize", f" obj: {expr(lp.c)}", "Subject To"]
    for i, (row, b) in enumerate(zip(lp.A_ub, lp.b_ub)):
        lines.append(f" ub{i}: {expr(row)} <= {b:.17g}")
    for i, (row, b) in enumerate(zip(lp.A_eq, lp.b_eq)):
        lines.append(f" eq{i}: {expr(row)} = {b:.17g}")
    lines += ["Bounds"] + [f" {n} >= 0" for n in names] + ["End", ""]
    with open(path, "w") as fh:
        fh.write("\n".join(lines))


__all__ = [
    "INFEASIBLE", "OPTIMAL", "LinearProgram", "LpSolution", "PolytopeSpec",
    "build_problem", "feasibility_rho", "lagrangian_max", "solve_opt", "solve_opt_cb",
    "solve_positive_lagrangian", "structural_point", "write_lp_file",
]
