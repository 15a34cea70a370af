"""Visit counters, empirical means and corruption-enlarged confidence bounds."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .cmdp import EpisodeFeedback, Layout
from .occupancy_lp import PolytopeSpec


def check_delta(delta: float) -> float:
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    return float(delta)


def enlarged_bound(n, log_term: float, corruption: float, T: int) -> np.ndarray:
    """min{1, sqrt(log_term / (2 max(N,1))) + C / max(N,1) + C / T}.

    The reward and cost bounds differ only through ``log_term``.
    """
    n1 = np.maximum(np.asarray(n, dtype=float), 1.0)
    return np.minimum(1.0, np.sqrt(log_term / (2.0 * n1)) + corruption / n1 + corruption / T)


def transition_radius(p_bar, n, log_term: float) -> np.ndarray:
    """Bernstein-style radius 2 sqrt(P ln / max(1,N-1)) + 14 ln / (3 max(1,N-1))."""
    d = np.maximum(np.asarray(n, dtype=float) - 1.0, 1.0)
    return 2.0 * np.sqrt(p_bar * log_term / d) + 14.0 * log_term / (3.0 * d)


@dataclass
class TransitionConfidence:
    p_bar: np.ndarray
    eps: np.ndarray

    def contains(self, p3: np.ndarray) -> bool:
        return bool(np.all(np.abs(self.p_bar - p3) <= self.eps))


class ConfidenceState:
    """Counters and estimates of a single learner.

    ``T`` is the global number of episodes (used by the ``C / T`` term);
    ``log_horizon`` is the horizon inside the logarithms, which the doubling
    trick replaces by the current epoch length.
    """

    def __init__(self, layout: Layout, n_constraints: int, delta: float, T: int,
                 corruption: float = 0.0, log_horizon: int | None = None):
        if T < 1:
            raise ValueError("T must be positive")
        if corruption < 0:
            raise ValueError("corruption guess must be nonnegative")
        self.layout = layout
        self.m = int(n_constraints)
        self.delta = check_delta(delta)
        self.T = int(T)
        self.corruption = float(corruption)
        self.log_horizon = int(T if log_horizon is None else log_horizon)
        self.n = np.zeros(layout.n_pairs, dtype=np.int64)
        self.m3 = np.zeros(layout.n_triples, dtype=np.int64)
        self.r_sum = np.zeros(layout.n_pairs)
        self.g_sum = np.zeros((layout.n_pairs, self.m))
        self.episodes = 0

    def update(self, fb: EpisodeFeedback) -> None:
        lay = self.layout
        x = fb.states[:-1]
        pairs = x * lay.n_actions + fb.actions
        # a pair is visited at most once per episode (loop-free), so plain fancy-index adds are safe
        self.n[pairs] += 1
        self.m3[lay.triple_ids(x, fb.actions, fb.states[1:])] += 1
        self.r_sum[pairs] += fb.rewards
        self.g_sum[pairs] += fb.costs
        self.episodes += 1

    @property
    def r_hat(self) -> np.ndarray:
        return self.r_sum / np.maximum(self.n, 1)

    @property
    def g_hat(self) -> np.ndarray:
        return self.g_sum / np.maximum(self.n, 1)[:, None]

    def _log(self, extra: float = 1.0) -> float:
        lay = self.layout
        return float(np.log(extra * self.log_horizon * lay.n_states * lay.n_actions / self.delta))

    def phi(self) -> np.ndarray:
        return enlarged_bound(self.n, self._log(2.0), self.corruption, self.T)

    def xi(self) -> np.ndarray:
        return enlarged_bound(self.n, self._log(2.0 * self.m), self.corruption, self.T)

    def optimistic_reward(self) -> np.ndarray:
        return self.r_hat + self.phi()

    def pessimistic_cost(self) -> np.ndarray:
        """Lower confidence bound on the costs (optimistic for feasibility)."""
        return self.g_hat - self.xi()[:, None]

    def transition_bounds(self) -> TransitionConfidence:
        lay = self.layout
        n_tri = self.n[lay.tri_pair]
        p_bar = self.m3 / np.maximum(n_tri, 1)
        return TransitionConfidence(p_bar, transition_radius(p_bar, n_tri, self._log()))

    def polytope(self) -> PolytopeSpec:
        tc = self.transition_bounds()
        return PolytopeSpec.confidence(self.layout, tc.p_bar, tc.eps)

    def dump_csv(self, path) -> None:
        lay = self.layout
        phi, xi, g = self.phi(), self.xi(), self.g_hat
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "a", "n", "r_hat"] + [f"g_hat_{i}" for i in range(self.m)] + ["phi", "xi"])
            for p in range(lay.n_pairs):
                x, a = divmod(p, lay.n_actions)
                w.writerow([x, a, int(self.n[p]), repr(float(self.r_hat[p]))]
                           + [repr(float(v)) for v in g[p]] + [repr(float(phi[p])), repr(float(xi[p]))])
