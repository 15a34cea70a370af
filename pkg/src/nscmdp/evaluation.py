"""Ground-truth oracle and regret / positive-violation trajectories."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .adversary import DistributionSequence
from .cmdp import LoopFreeCmdp, OccupancyMeasure, occupancy_from_policy
from .occupancy_lp import PolytopeSpec, feasibility_rho, solve_opt


class InfeasibleOracle(RuntimeError):
    """No occupancy measure satisfies the averaged constraints."""


@dataclass
class OracleSolution:
    q_star: OccupancyMeasure
    opt_value: float
    rho: float
    r_bar: np.ndarray
    g_bar: np.ndarray

    @property
    def slater(self) -> bool:
        return self.rho > 0


def oracle(cmdp: LoopFreeCmdp, seq: DistributionSequence) -> OracleSolution:
    r_bar, g_bar = seq.avg_reward(), seq.avg_cost()
    poly = PolytopeSpec.exact(cmdp)
    sol = solve_opt(poly, r_bar, g_bar, cmdp.alpha)
    if not sol.feasible:
        raise InfeasibleOracle(
            "the averaged constraints admit no occupancy measure: no q with "
            "G_bar^T q <= alpha exists, so the regret baseline is undefined")
    rho = feasibility_rho(poly, g_bar, cmdp.alpha)
    return OracleSolution(sol.q, float(r_bar @ sol.q.q2), rho, r_bar, g_bar)


@dataclass
class RunTrace:
    inst_reward: np.ndarray     # (T,) E[r_t]^T q_t
    inst_cost: np.ndarray       # (T, m) E[G_t]^T q_t
    cum_regret: np.ndarray      # (T,)
    pos_violation: np.ndarray   # (T, m) per-constraint partial sums of the positive parts
    opt_value: float

    @property
    def cum_violation(self) -> np.ndarray:
        return self.pos_violation.max(axis=1)

    @property
    def T(self) -> int:
        return len(self.inst_reward)

    def regret_via_baseline(self) -> float:
        """R_T as T * OPT minus the collected expected reward (second path)."""
        return self.T * self.opt_value - float(np.sum(self.inst_reward))


def trace_from_q2(q2: np.ndarray, seq: DistributionSequence, alpha, orc: OracleSolution) -> RunTrace:
    """``q2`` holds the realised pair occupancies, one row per episode."""
    q2 = np.asarray(q2, dtype=float)
    T = len(q2)
    R = seq.reward_means[:T]
    Gm = seq.cost_means[:T]
    inst_r = np.einsum("tp,tp->t", R, q2)
    inst_g = np.einsum("tpm,tp->tm", Gm, q2)
    opt_t = R @ orc.q_star.q2
    cum_regret = np.cumsum(opt_t - inst_r)
    pos = np.cumsum(np.maximum(inst_g - np.asarray(alpha)[None], 0.0), axis=0)
    return RunTrace(inst_r, inst_g, cum_regret, pos, orc.opt_value)


def regret_violation(policies, cmdp: LoopFreeCmdp, seq: DistributionSequence,
                     orc: OracleSolution) -> RunTrace:
    q2 = np.array([occupancy_from_policy(cmdp, pi).q2 for pi in policies])
    return trace_from_q2(q2, seq, cmdp.alpha, orc)


def loglog_slope(values, start_frac: float = 0.25) -> float:
    """Least-squares slope of log max(v_t, 1) against log t for t in [T/4, T]."""
    v = np.asarray(values, dtype=float)
    T = len(v)
    t = np.arange(1, T + 1)
    sel = t >= max(1, int(np.ceil(start_frac * T)))
    x = np.log(t[sel])
    y = np.log(np.maximum(v[sel], 1.0))
    if len(x) < 2:
        return 0.0
    return float(np.polyfit(x, y, 1)[0])
