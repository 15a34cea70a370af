"""Learner-environment loop shared by the harness and the tests."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .adversary import DistributionSequence
from .cmdp import occupancy_from_policy, sample_episode
from .instances import Instance


@dataclass
class EpisodeLog:
    q2: np.ndarray                  # (T, n_pairs) realised occupancies of the played policies
    lp_feasible: np.ndarray         # (T,) 1 if the played policy came from a feasible program
    chosen: np.ndarray              # (T,) master's chosen instance, -1 for single learners
    w_min: np.ndarray               # (T,) smallest master weight, nan for single learners
    w_argmax: np.ndarray            # (T,) index of the largest master weight, -1 otherwise
    extra: dict = field(default_factory=dict)


def run_learner(inst: Instance, seq: DistributionSequence, learner, rng, T: int | None = None) -> EpisodeLog:
    """Play ``T`` episodes; ``learner`` exposes ``act() -> Policy`` and ``observe(feedback)``.

    Learners may also expose ``episode_info() -> (lp_feasible, chosen, w_min, w_argmax)``
    describing the policy returned by the last ``act`` call.
    """
    cmdp = inst.cmdp
    T = seq.T if T is None else T
    n = cmdp.layout.n_pairs
    q2 = np.empty((T, n))
    feas = np.ones(T, dtype=np.int8)
    chosen = np.full(T, -1, dtype=np.int64)
    w_min = np.full(T, np.nan)
    w_arg = np.full(T, -1, dtype=np.int64)
    info = getattr(learner, "episode_info", None)
    last_pi = None
    for t in range(T):
        pi = learner.act()
        if pi is not last_pi:
            q = occupancy_from_policy(cmdp, pi).q2
            last_pi = pi
        q2[t] = q
        if info is not None:
            feas[t], chosen[t], w_min[t], w_arg[t] = info()
        fb = sample_episode(cmdp, pi, seq.reward_means[t], seq.cost_means[t], rng, seq.law)
        learner.observe(fb)
    return EpisodeLog(q2, feas, chosen, w_min, w_arg)
