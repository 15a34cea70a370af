"""Corralling corruption guesses with a log-barrier FTRL master.

The master keeps a weight per corruption guess 2^j, samples one instance per
episode, lets it pick the policy and feeds it the feedback. Instances are
scored with importance-weighted optimistic losses that add the estimated
positive violation, scaled by a bound on the Lagrange multipliers, to the
reward loss. In the ``stabilized`` variant each instance is split into dyadic
weight bands whose sub-learners only receive a thinned feedback stream, the
decision set is the simplex cut at 1/T and inverse-weight bonuses reward
instances whose weight dropped. The ``plain`` variant uses the bare instances,
the full simplex and no bonuses.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import ceil, log, log2, sqrt

import numpy as np

from .cmdp import EpisodeFeedback, Layout, OccupancyMeasure, Policy, occupancy_from_transition
from .confidence import ConfidenceState, check_delta
from .ns_sops import NsSops

VARIANTS = ("stabilized", "plain")


class GuardViolation(RuntimeError):
    """eta * w * |loss - bonus| exceeded 1/2."""


class FtrlConvergenceError(RuntimeError):
    pass


@dataclass
class MasterConfig:
    T: int
    delta: float
    horizon: int
    n_constraints: int
    n_states: int
    n_actions: int
    rho_hat: float
    variant: str = "stabilized"
    beta_scale: float = 1.0
    n_instances: int | None = None
    doubling: bool = True

    def __post_init__(self):
        check_delta(self.delta)
        if self.T < 2:
            raise ValueError("T must be at least 2")
        if self.rho_hat <= 0:
            raise ValueError("rho_hat must be a positive lower bound on the Slater margin")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.beta_scale <= 0:
            raise ValueError("beta_scale must be positive")

    @property
    def M(self) -> int:
        return self.n_instances or ceil(log2(self.T))

    @property
    def Lambda(self) -> float:
        return (self.horizon * self.n_constraints + 1) / self.rho_hat

    @property
    def gamma(self) -> float:
        return sqrt(log(self.M / self.delta) / (self.T * self.M))

    @property
    def betas(self) -> tuple:
        """(beta_1, ..., beta_6) with unit leading constants times ``beta_scale``."""
        L, X, A, T, d, m = self.horizon, self.n_states, self.n_actions, self.T, self.delta, self.n_constraints
        lg = log2(T)
        b1 = L ** 2 * X ** 2 * A * log(T * X * A / d)
        b2 = X ** 2 * A ** 2 * lg * log(lg / d)
        b3 = log(T) ** 2 * X * A
        b4 = L ** 2 * X ** 2 * A * log(m * T * X * A / d)
        s = self.beta_scale
        return tuple(s * b for b in (b1, b2, b3, b4, b2, b3))

    @property
    def eta(self) -> float:
        L, m, T = self.horizon, self.n_constraints, self.T
        if self.variant == "plain":
            return sqrt(log(T) / T) / (2 * L * m * self.Lambda)
        b1, b2, _, b4, b5, _ = self.betas
        return 1.0 / (2 * self.Lambda * m * (sqrt(b1 * T) + b2 + b5 + sqrt(b4 * T)))

    @property
    def bonus_coefficient(self) -> float:
        if self.variant == "plain":
            return 0.0
        b1, b2, _, b4, b5, _ = self.betas
        m, lam = self.n_constraints, self.Lambda
        return (m * lam * b5 + b2) + (sqrt(b1) + m * lam * sqrt(b4)) * sqrt(self.T)

    @property
    def floor(self) -> float:
        return 1.0 / self.T if self.variant == "stabilized" else 0.0

    def guesses(self) -> np.ndarray:
        return 2.0 ** np.arange(1, self.M + 1)


# ---------------------------------------------------------------- primitives

def select_instance(w: np.ndarray, rng) -> int:
    """Categorical draw from ``w`` by inverse CDF on one uniform."""
    u = rng.random()
    c = np.cumsum(w)
    return int(min(np.searchsorted(c, u * c[-1], side="right"), len(w) - 1))


def band_of(w: float) -> int:
    """k with w in (2^{-k-1}, 2^{-k}]."""
    if not 0 < w <= 1:
        raise ValueError(f"weight {w} outside (0, 1]")
    k = int(np.floor(-np.log2(w)))
    # floating guards at the dyadic boundaries
    while w > 2.0 ** -k:
        k -= 1
    while w <= 2.0 ** (-k - 1):
        k += 1
    return k


def routing_probability(w: float) -> tuple[int, float]:
    k = band_of(w)
    return k, 2.0 ** (-k - 1) / w


def estimated_violation(G_hat: np.ndarray, q_hat: OccupancyMeasure, alpha) -> float:
    """sum_i [G_hat_i^T q_hat - alpha_i]^+."""
    return float(np.maximum(G_hat.T @ q_hat.q2 - np.asarray(alpha), 0.0).sum())


def loss_estimator(j: int, j_t: int, w_tj: float, path_rewards, horizon: int, Lambda: float,
                   gamma: float, G_hat, q_hat: OccupancyMeasure, alpha) -> float:
    if j != j_t:
        return 0.0
    body = horizon - float(np.sum(path_rewards)) + Lambda * estimated_violation(G_hat, q_hat, alpha)
    return body / (w_tj + gamma)


def bonus(nu_t, nu_prev, coefficient: float):
    return coefficient * (np.asarray(nu_t) - np.asarray(nu_prev))


@dataclass
class FtrlSolution:
    w: np.ndarray
    mu: float
    kkt: float
    iterations: int


def _weights(S, mu, eta, floor):
    return np.maximum(floor, 1.0 / (eta * (S + mu)))


def kkt_residual(w, S, eta, floor, mu=None) -> float:
    """Scale-free KKT residual of the cut-simplex log-barrier problem.

    Free coordinates need eta w_j (S_j + mu) = 1, coordinates on the floor need
    eta w_j (S_j + mu) >= 1. When ``mu`` is omitted it is recovered from the
    free coordinates.
    """
    w = np.asarray(w, dtype=float)
    S = np.asarray(S, dtype=float)
    on_floor = w <= floor * (1 + 1e-12) if floor > 0 else np.zeros(len(w), bool)
    free = ~on_floor
    if mu is None:
        mu = float(np.mean(1.0 / (eta * w[free]) - S[free])) if free.any() else 0.0
    prod = eta * w * (S + mu)
    res = abs(w.sum() - 1.0)
    if free.any():
        res = max(res, float(np.max(np.abs(prod[free] - 1.0))))
    if on_floor.any():
        res = max(res, float(np.max(np.maximum(0.0, 1.0 - prod[on_floor]))))
    res = max(res, float(np.max(np.maximum(0.0, floor - w))))
    return res


def ftrl_weights(S, eta: float, floor: float, start: str = "left", tol: float = 1e-14,
                 max_iter: int = 200) -> FtrlSolution:
    """argmin_{w in simplex, w >= floor} w.S + (1/eta) sum ln(1/w_j).

    The solution is w_j = max(floor, 1 / (eta (S_j + mu))) where the multiplier
    mu solves the convex decreasing equation sum_j w_j(mu) = 1. Newton steps on
    mu are safeguarded by a bracket (bisection when a step leaves it); ``start``
    picks the bracket end Newton starts from.
    """
    S = np.asarray(S, dtype=float)
    M = len(S)
    if M * floor >= 1:
        raise ValueError("floor too large for the number of coordinates")
    shift = S.min()
    Sz = S - shift
    lo = 1.0 / eta                      # the smallest coordinate gets weight 1 >= sum needed
    hi = (M / eta) if floor == 0 else max(M, 1.0 / floor) / eta
    hi = max(hi, lo)

    def f(mu):
        w = _weights(Sz, mu, eta, floor)
        d = 1.0 / (eta * (Sz + mu))
        free = d > floor
        df = -float(np.sum(eta * d[free] ** 2))
        return float(w.sum() - 1.0), df

    while f(hi)[0] > 0:
        hi *= 2
    mu = lo if start == "left" else hi
    for it in range(1, max_iter + 1):
        val, df = f(mu)
        if val > 0:
            lo = mu
        else:
            hi = mu
        if abs(val) <= tol or hi - lo <= 1e-15 * max(1.0, abs(hi)):
            break
        step = mu - val / df if df < 0 else 0.5 * (lo + hi)
        mu = step if lo < step < hi else 0.5 * (lo + hi)
    else:
        raise FtrlConvergenceError(f"FTRL multiplier did not converge in {max_iter} steps")
    w = _weights(Sz, mu, eta, floor)
    free = w > floor
    # renormalise the free block only, so the floors stay exact
    w[free] *= (1.0 - floor * np.count_nonzero(~free)) / w[free].sum()
    return FtrlSolution(w, mu - shift, kkt_residual(w, S, eta, floor, mu - shift), it)


# ---------------------------------------------------------------- instances

@dataclass
class RoutingEvent:
    episode: int
    instance: int
    band: int
    weight: float
    draw: float
    probability: float
    accepted: bool


class StabilizedInstance:
    """One corruption guess split into dyadic weight bands.

    Band k hosts a learner whose guess is theta_k = 2^{1-k} C + 2|X||A| ln(log2(T) / delta).
    Sub-learners are created when their band is first visited. ``stats``
    counts every episode on which this instance was chosen; it provides the
    cost estimate and the empirical transitions used in the master's loss.
    """

    def __init__(self, index: int, guess: float, layout: Layout, alpha, delta: float, T: int,
                 doubling: bool = True, stabilize: bool = True):
        self.index = index
        self.guess = float(guess)
        self.layout = layout
        self.alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
        self.delta = delta
        self.T = T
        self.doubling = doubling
        self.stabilize = stabilize
        self.n_bands = ceil(log2(T)) + 1
        self.subs: dict[int, NsSops] = {}
        self.stats = ConfidenceState(layout, len(self.alpha), delta, T)
        self.log: list[RoutingEvent] = []
        self._pending = None  # (band or None, q_hat, lp_feasible) of the last proposal

    def theta(self, k: int) -> float:
        lay = self.layout
        return 2.0 ** (1 - k) * self.guess + 2 * lay.n_states * lay.n_actions * log(log2(self.T) / self.delta)

    def sub(self, k: int) -> NsSops:
        if k not in self.subs:
            c = self.theta(k) if self.stabilize else self.guess
            self.subs[k] = NsSops(self.layout, self.alpha, c, self.delta, self.T,
                                  doubling=self.doubling)
        return self.subs[k]

    def propose(self, w: float) -> tuple[Policy, OccupancyMeasure, bool]:
        if not self.stabilize:
            s = self.sub(0)
            q = s.q_hat if s.q_hat is not None else self._uniform_occupancy()
            self._pending = (0, q, s.lp_feasible)
            return s.act(), q, s.lp_feasible
        if w <= 1.0 / self.T:
            q = self._uniform_occupancy()
            self._pending = (None, q, True)
            return Policy.uniform(self.layout), q, True
        k = band_of(w)
        s = self.sub(k)
        q = s.q_hat if s.q_hat is not None else self._uniform_occupancy()
        self._pending = (k, q, s.lp_feasible)
        return s.act(), q, s.lp_feasible

    def _uniform_occupancy(self) -> OccupancyMeasure:
        """Uniform policy under this instance's empirical transitions (uniform rows if unvisited)."""
        lay = self.layout
        n = self.stats.n[lay.tri_pair]
        width = np.array(lay.layer_sizes)[lay.tri_layer + 1]
        p = np.where(n > 0, self.stats.m3 / np.maximum(n, 1), 1.0 / width)
        probs = np.full((lay.n_states - 1, lay.n_actions), 1.0 / lay.n_actions)
        return occupancy_from_transition(lay, p, probs)

    def observe(self, fb: EpisodeFeedback, w: float, episode: int, rng) -> None:
        self.stats.update(fb)
        k = self._pending[0]
        if k is None:
            return
        if not self.stabilize:
            self.log.append(RoutingEvent(episode, self.index, 0, w, 0.0, 1.0, True))
            self.subs[0].observe(fb)
            return
        prob = 2.0 ** (-k - 1) / w
        u = float(rng.random())
        ok = u < prob
        self.log.append(RoutingEvent(episode, self.index, k, w, u, prob, ok))
        if ok:
            self.subs[k].observe(fb)


def audit_routing(instances) -> list[str]:
    """Every sub-learner update must match an accepted, well-formed routing event."""
    problems = []
    for inst in instances:
        accepted: dict[int, int] = {}
        for ev in inst.log:
            if inst.stabilize:
                lo, hi = 2.0 ** (-ev.band - 1), 2.0 ** (-ev.band)
                if not lo < ev.weight <= hi:
                    problems.append(f"instance {inst.index} episode {ev.episode}: w={ev.weight} not in band {ev.band}")
                if abs(ev.probability - lo / ev.weight) > 1e-15:
                    problems.append(f"instance {inst.index} episode {ev.episode}: wrong routing probability")
                if ev.accepted != (ev.draw < ev.probability):
                    problems.append(f"instance {inst.index} episode {ev.episode}: acceptance inconsistent with draw")
            if ev.accepted:
                accepted[ev.band] = accepted.get(ev.band, 0) + 1
        for k, s in inst.subs.items():
            n = accepted.get(k, 0)
            if s.conf.episodes != n or int(s.conf.n.sum()) != n * inst.layout.horizon:
                problems.append(f"instance {inst.index} band {k}: {s.conf.episodes} updates "
                                f"but {n} accepted routing events")
    return problems


# ---------------------------------------------------------------- master

@dataclass
class MasterTrace:
    chosen: list = field(default_factory=list)
    band: list = field(default_factory=list)
    loss: list = field(default_factory=list)
    bonus_sum: list = field(default_factory=list)
    guard_max: float = 0.0


class LagFtrl:
    def __init__(self, cfg: MasterConfig, layout: Layout, alpha, rng_select, rng_route):
        self.cfg = cfg
        self.layout = layout
        self.alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
        self.rng_select = rng_select
        self.rng_route = rng_route
        M = cfg.M
        self.eta = cfg.eta
        self.gamma = cfg.gamma
        self.coef = cfg.bonus_coefficient
        self.floor = cfg.floor
        stab = cfg.variant == "stabilized"
        self.instances = [StabilizedInstance(j, g, layout, self.alpha, cfg.delta, cfg.T,
                                             doubling=cfg.doubling, stabilize=stab)
                          for j, g in enumerate(cfg.guesses())]
        self.w = np.full(M, 1.0 / M)
        self.cum = np.zeros(M)
        self.nu = np.full(M, float(M))
        self.t = 0
        self.trace = MasterTrace()
        self._choice = None

    def act(self) -> Policy:
        j = select_instance(self.w, self.rng_select)
        pi, q, feas = self.instances[j].propose(self.w[j])
        self._choice = (j, q, feas)
        return pi

    def episode_info(self):
        j, _, feas = self._choice
        return int(feas), j, float(self.w.min()), int(np.argmax(self.w))

    def observe(self, fb: EpisodeFeedback) -> None:
        cfg = self.cfg
        j, q_hat, _ = self._choice
        self.t += 1
        inst = self.instances[j]
        w_j = float(self.w[j])
        inst.observe(fb, w_j, self.t, self.rng_route)

        loss = np.zeros(cfg.M)
        loss[j] = loss_estimator(j, j, w_j, fb.rewards, cfg.horizon, cfg.Lambda, self.gamma,
                                 inst.stats.g_hat, q_hat, self.alpha)
        nu_new = np.maximum(self.nu, 1.0 / self.w)
        b = bonus(nu_new, self.nu, self.coef)
        self.nu = nu_new
        guard = float(np.max(self.eta * self.w * np.abs(loss - b)))
        self.trace.guard_max = max(self.trace.guard_max, guard)
        if guard > 0.5:
            raise GuardViolation(
                f"episode {self.t}: eta*w*|loss-bonus| = {guard:.4g} > 1/2 "
                f"(eta={self.eta:.3g}, w={self.w.tolist()}, loss={loss[j]:.4g}, bonus={b.tolist()})")
        self.cum += loss - b
        sol = ftrl_weights(self.cum, self.eta, self.floor)
        if sol.kkt > 1e-10:
            raise FtrlConvergenceError(f"episode {self.t}: KKT residual {sol.kkt:.3e}")
        tr = self.trace
        tr.chosen.append(j)
        tr.band.append(-1 if inst._pending[0] is None else inst._pending[0])
        tr.loss.append(loss[j])
        tr.bonus_sum.append(float(b.sum()))
        self.w = sol.w
