"""Optimistic learner for a known corruption level.

Every episode the learner re-estimates rewards, costs and transitions, then
plays the policy induced by the optimistic program: upper confidence rewards,
lower confidence costs, and the transition confidence polytope. When that
program is infeasible it plays a structural point of the polytope instead.
"""

from __future__ import annotations

import numpy as np

from .cmdp import EpisodeFeedback, Layout, OccupancyMeasure, Policy, policy_from_occupancy
from .confidence import ConfidenceState, check_delta
from .occupancy_lp import solve_opt_cb, structural_point


def epoch_of(episode: int, first: int = 1) -> tuple[int, int]:
    """(epoch index, epoch length) of the 1-based ``episode`` under doubling.

    Epoch e has length ``first * 2**e`` and starts after ``first * (2**e - 1)`` episodes.
    """
    if episode < 1:
        raise ValueError("episodes are numbered from 1")
    e = int(np.floor(np.log2((episode - 1) / first + 1)))
    # guard the float log at exact powers of two
    while first * (2 ** (e + 1) - 1) < episode:
        e += 1
    while e > 0 and first * (2 ** e - 1) >= episode:
        e -= 1
    return e, first * 2 ** e


class NsSops:
    def __init__(self, layout: Layout, alpha, corruption: float, delta: float, T: int,
                 doubling: bool = False, first_epoch: int = 1):
        check_delta(delta)
        if T < 1:
            raise ValueError("T must be positive")
        if corruption < 0:
            raise ValueError("corruption guess must be nonnegative")
        self.layout = layout
        self.alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
        self.T = int(T)
        self.doubling = doubling
        self.first_epoch = int(first_epoch)
        self.conf = ConfidenceState(layout, len(self.alpha), delta, T, corruption,
                                    log_horizon=self._horizon_for(1))
        self.policy = Policy.uniform(layout)
        self.q_hat: OccupancyMeasure | None = None
        self.lp_feasible = True
        self.lp_objective = np.nan
        self.resets = 0

    @property
    def episode(self) -> int:
        return self.conf.episodes

    def _horizon_for(self, episode: int) -> int:
        if not self.doubling:
            return self.T
        return epoch_of(episode, self.first_epoch)[1]

    def act(self) -> Policy:
        return self.policy

    def observe(self, fb: EpisodeFeedback) -> None:
        self.conf.update(fb)
        h = self._horizon_for(self.episode + 1)
        if h != self.conf.log_horizon:
            self.conf.log_horizon = h
            self.resets += 1
        self.replan()

    def replan(self) -> None:
        conf = self.conf
        poly = conf.polytope()
        sol = solve_opt_cb(poly, conf.optimistic_reward(), conf.pessimistic_cost(), self.alpha)
        self.lp_feasible = sol.feasible
        if not sol.feasible:
            sol = structural_point(poly)
            if not sol.feasible:
                raise RuntimeError("confidence polytope is empty; this cannot happen for valid counts")
        self.lp_objective = sol.objective if self.lp_feasible else np.nan
        self.q_hat = sol.q
        self.policy = policy_from_occupancy(sol.q)

    def episode_info(self):
        """(lp_feasible, chosen, w_min, w_argmax) for the policy about to be played."""
        return int(self.lp_feasible), -1, np.nan, -1
