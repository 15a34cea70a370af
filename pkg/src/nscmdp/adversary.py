"""Per-episode mean sequences and their adversarial corruption."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from math import ceil

import numpy as np

LAWS = ("bernoulli", "mean")
KINDS = ("stationary", "alternating", "budgeted", "fully_adversarial")


class SequenceParameterError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class DistributionSequence:
    """Reward means (T, n_pairs) and cost means (T, n_pairs, m) of every episode."""

    reward_means: np.ndarray
    cost_means: np.ndarray
    law: str = "bernoulli"

    def __post_init__(self):
        r = np.asarray(self.reward_means, dtype=float)
        g = np.asarray(self.cost_means, dtype=float)
        if g.ndim == 2:
            g = g[:, :, None]
        if r.ndim != 2 or g.shape[:2] != r.shape:
            raise SequenceParameterError(f"inconsistent shapes {r.shape} and {g.shape}")
        for name, v in (("reward", r), ("cost", g)):
            if v.size and (v.min() < 0 or v.max() > 1):
                raise SequenceParameterError(f"{name} means must lie in [0, 1]")
        if self.law not in LAWS:
            raise SequenceParameterError(f"unknown sampling law {self.law!r}")
        r.setflags(write=False)
        g.setflags(write=False)
        object.__setattr__(self, "reward_means", r)
        object.__setattr__(self, "cost_means", g)

    @property
    def T(self) -> int:
        return self.reward_means.shape[0]

    @property
    def n_pairs(self) -> int:
        return self.reward_means.shape[1]

    @property
    def n_constraints(self) -> int:
        return self.cost_means.shape[2]

    def avg_reward(self) -> np.ndarray:
        return self.reward_means.mean(axis=0)

    def avg_cost(self) -> np.ndarray:
        return self.cost_means.mean(axis=0)

    def permuted(self, order) -> "DistributionSequence":
        return DistributionSequence(self.reward_means[order], self.cost_means[order], self.law)

    def dump_csv(self, path) -> None:
        """One row per (episode, pair): reward mean followed by the m cost means."""
        m = self.n_constraints
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["episode", "pair", "reward"] + [f"cost_{i}" for i in range(m)])
            for t in range(self.T):
                for p in range(self.n_pairs):
                    w.writerow([t, p, repr(float(self.reward_means[t, p]))]
                               + [repr(float(v)) for v in self.cost_means[t, p]])


@dataclass
class CorruptionReport:
    c_r: float
    c_g: float
    anchor_r: np.ndarray
    anchor_g: np.ndarray
    avg_r: np.ndarray
    avg_g: np.ndarray

    @property
    def c_total(self) -> float:
        return max(self.c_r, self.c_g)


def _unique_rows(X: np.ndarray):
    """Distinct episodes and their multiplicities (the objectives are sums over t)."""
    flat = X.reshape(len(X), -1)
    uniq, counts = np.unique(flat, axis=0, return_counts=True)
    return uniq.reshape((-1,) + X.shape[1:]), counts.astype(float)


def _median_anchor(X: np.ndarray):
    if len(X) == 0:
        return 0.0, np.zeros(X.shape[1:])
    anchor = np.median(X, axis=0)
    return float(np.abs(X - anchor).sum()), anchor


def corruption_rewards(seq: DistributionSequence):
    """min_r sum_t ||E r_t - r||_1, separable per entry, solved by medians."""
    return _median_anchor(seq.reward_means)


def cost_objective(cost_means: np.ndarray, G: np.ndarray, weights=None) -> float:
    """sum_t max_i ||E g_{t,i} - g_i||_1 with ``G`` of shape (n_pairs, m)."""
    dev = np.abs(cost_means - G[None]).sum(axis=1).max(axis=1)
    return float(dev.sum() if weights is None else dev @ weights)


def corruption_costs(seq: DistributionSequence, iters: int = 10_000):
    """min over G of sum_t max_i ||E g_{t,i} - g_i||_1.

    m = 1 is solved exactly by medians. Otherwise the per-constraint median
    solution is both a warm start and, via the lower bound
    max_i min_{g_i} sum_t ||E g_{t,i} - g_i||_1, a certificate: when it already
    meets the bound it is returned directly. Else projected subgradient descent
    with step 1/sqrt(k) on the normalised subgradient, keeping the best iterate.
    """
    X = seq.cost_means
    T, n, m = X.shape
    if T == 0:
        return 0.0, np.zeros((n, m))
    anchor = np.median(X, axis=0)
    per_constraint = np.abs(X - anchor[None]).sum(axis=(0, 1))
    if m == 1:
        return float(per_constraint[0]), anchor
    U, w = _unique_rows(X)
    best = cost_objective(U, anchor, w)
    lower = float(per_constraint.max())
    if best <= lower + 1e-12 * max(1.0, lower):
        return best, anchor
    G = anchor.copy()
    best_G = G.copy()
    scale = np.sqrt(n * m)
    step0 = 0.03  # first step moves G by 3% of the box diameter
    for k in range(1, iters + 1):
        dev = np.abs(U - G[None]).sum(axis=1)  # (u, m)
        arg = dev.argmax(axis=1)
        sub = np.zeros_like(G)
        sgn = np.sign(G[None] - U)  # (u, n, m)
        for i in range(m):
            sel = arg == i
            if np.any(sel):
                sub[:, i] = (w[sel, None] * sgn[sel, :, i]).sum(axis=0)
        norm = np.linalg.norm(sub)
        if norm == 0:
            break
        G = np.clip(G - sub / norm * (step0 * scale / np.sqrt(k)), 0.0, 1.0)
        val = cost_objective(U, G, w)
        if val < best:
            best, best_G = val, G.copy()
    return best, best_G


def corruption_report(seq: DistributionSequence) -> CorruptionReport:
    c_r, r0 = corruption_rewards(seq)
    c_g, g0 = corruption_costs(seq)
    return CorruptionReport(c_r, c_g, r0, g0, seq.avg_reward(), seq.avg_cost())


def _away_from_boundary(base: np.ndarray, amount) -> np.ndarray:
    """Move every entry by ``amount`` towards the far side of [0, 1]."""
    return np.where(base <= 0.5, base + amount, base - amount)


def make_sequence(kind: str, params: dict | None, reward_base, cost_base, T: int, rng,
                  law: str = "bernoulli") -> DistributionSequence:
    """Build a mean sequence around the base means.

    kinds:
      stationary                  every episode uses the base means
      alternating(period, amplitude, entries, target)
                                  odd blocks of ``period`` episodes shift the chosen
                                  entries by ``amplitude`` away from the nearest bound
      budgeted(c_target, max_shift, placement)
                                  K episodes shift every entry by the same amount so
                                  the measured corruption equals ``c_target``
      fully_adversarial(schedule, switch_fraction, target)
                                  ``alternate``: means flip to 1 - base every other
                                  episode; ``switch``: base for the first fraction of
                                  episodes, 1 - base afterwards
    """
    params = dict(params or {})
    r0 = np.asarray(reward_base, dtype=float)
    g0 = np.asarray(cost_base, dtype=float).reshape(len(r0), -1)
    if T < 1:
        raise SequenceParameterError("T must be positive")
    R = np.repeat(r0[None], T, axis=0)
    G = np.repeat(g0[None], T, axis=0)

    if kind == "stationary":
        pass
    elif kind == "alternating":
        period = int(params.get("period", 1))
        amp = float(params.get("amplitude", 0.5))
        target = params.get("target", "both")
        if period < 1 or not 0 <= amp <= 0.5:
            raise SequenceParameterError("alternating needs period >= 1 and amplitude in [0, 0.5]")
        entries = params.get("entries")
        sel = np.arange(len(r0)) if entries is None else np.asarray(entries, dtype=int)
        odd = (np.arange(T) // period) % 2 == 1
        if target in ("both", "reward"):
            R[np.ix_(odd, sel)] = _away_from_boundary(r0[sel], amp)
        if target in ("both", "cost"):
            G[np.ix_(odd, sel)] = _away_from_boundary(g0[sel], amp)
    elif kind == "budgeted":
        c = float(params.get("c_target", params.get("C_target", 0.0)))
        shift = float(params.get("max_shift", 0.5))
        if c < 0 or not 0 < shift <= 0.5:
            raise SequenceParameterError("budgeted needs c_target >= 0 and max_shift in (0, 0.5]")
        if c > 0:
            n = len(r0)
            K = ceil(c / (n * shift) - 1e-12)
            if 2 * K > T:
                raise SequenceParameterError(
                    f"c_target={c} needs {K} corrupted episodes, more than T/2 = {T / 2}")
            d = c / (K * n)
            placement = params.get("placement", "random")
            if placement == "random":
                idx = np.sort(rng.choice(T, size=K, replace=False))
            elif placement == "front":
                idx = np.arange(K)
            else:
                raise SequenceParameterError(f"unknown placement {placement!r}")
            R[idx] = _away_from_boundary(r0, d)
            G[idx] = _away_from_boundary(g0, d)
    elif kind == "fully_adversarial":
        schedule = params.get("schedule", "alternate")
        if schedule == "alternate":
            flip = np.arange(T) % 2 == 1
        elif schedule == "switch":
            f = float(params.get("switch_fraction", 0.5))
            if not 0 < f < 1:
                raise SequenceParameterError("switch_fraction must lie in (0, 1)")
            flip = np.arange(T) >= int(round(f * T))
        else:
            raise SequenceParameterError(f"unknown schedule {schedule!r}")
        target = params.get("target", "both")
        if target not in ("both", "reward", "cost"):
            raise SequenceParameterError(f"unknown target {target!r}")
        if target in ("both", "reward"):
            R[flip] = 1.0 - r0
        if target in ("both", "cost"):
            G[flip] = 1.0 - g0
    else:
        raise SequenceParameterError(f"unknown sequence kind {kind!r}; expected one of {KINDS}")
    return DistributionSequence(R, G, law)
