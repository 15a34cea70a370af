"""Loop-free episodic CMDPs, policies and occupancy measures.

States are numbered densely in layer order, so layer ``k`` owns the contiguous
block ``layer_start[k] : layer_start[k + 1]``; the terminal state is always the
last one. State-action pairs only exist for non-terminal states and are
flattened as ``x * n_actions + a``. Triples ``(x, a, x')`` are enumerated layer
by layer and stored in flat arrays (``tri_x``, ``tri_a``, ``tri_xn``).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

DEFAULT_TOL = 1e-9


class StructureError(ValueError):
    """Raised when an object does not respect the declared layer structure."""


class Layout:
    """Layer structure shared by a CMDP, its policies and its occupancies."""

    def __init__(self, layer_sizes, n_actions: int):
        sizes = tuple(int(s) for s in layer_sizes)
        if len(sizes) < 2:
            raise StructureError("need at least two layers (horizon L >= 1)")
        if sizes[0] != 1 or sizes[-1] != 1:
            raise StructureError("first and last layers must be singletons")
        if any(s < 1 for s in sizes):
            raise StructureError("every layer needs at least one state")
        if n_actions < 1:
            raise StructureError("need at least one action")
        self.layer_sizes = sizes
        self.n_actions = int(n_actions)
        self.horizon = len(sizes) - 1
        self.layer_start = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
        self.n_states = int(self.layer_start[-1])
        self.terminal = self.n_states - 1
        self.layer_of = np.repeat(np.arange(len(sizes)), sizes)
        self.n_pairs = (self.n_states - 1) * self.n_actions

        xs, as_, xns = [], [], []
        for k in range(self.horizon):
            for x in range(self.layer_start[k], self.layer_start[k + 1]):
                for a in range(self.n_actions):
                    for xn in range(self.layer_start[k + 1], self.layer_start[k + 2]):
                        xs.append(x)
                        as_.append(a)
                        xns.append(xn)
        self.tri_x = np.array(xs, dtype=np.int64)
        self.tri_a = np.array(as_, dtype=np.int64)
        self.tri_xn = np.array(xns, dtype=np.int64)
        self.tri_pair = self.tri_x * self.n_actions + self.tri_a
        self.tri_layer = self.layer_of[self.tri_x]
        self.n_triples = len(xs)

    def __eq__(self, other):
        return (
            isinstance(other, Layout)
            and self.layer_sizes == other.layer_sizes
            and self.n_actions == other.n_actions
        )

    def __hash__(self):
        return hash((self.layer_sizes, self.n_actions))

    def __repr__(self):
        return f"Layout(layer_sizes={self.layer_sizes}, n_actions={self.n_actions})"

    def states_in_layer(self, k: int) -> range:
        return range(int(self.layer_start[k]), int(self.layer_start[k + 1]))

    def pair(self, x: int, a: int) -> int:
        return x * self.n_actions + a

    @cached_property
    def layer_tri_start(self) -> np.ndarray:
        sizes = np.array(self.layer_sizes)
        return np.concatenate([[0], np.cumsum(sizes[:-1] * self.n_actions * sizes[1:])])

    def triple_ids(self, x, a, xn) -> np.ndarray:
        """Flat triple index of layer-adjacent (x, a, x') (vectorised, unchecked)."""
        x = np.asarray(x)
        k = self.layer_of[x]
        width = np.array(self.layer_sizes)[k + 1]
        local = (x - self.layer_start[k]) * self.n_actions + np.asarray(a)
        return self.layer_tri_start[k] + local * width + (np.asarray(xn) - self.layer_start[k + 1])

    @cached_property
    def pair_layer(self) -> np.ndarray:
        return np.repeat(self.layer_of[:-1], self.n_actions)

    @cached_property
    def triple_index(self) -> dict:
        return {
            (int(x), int(a), int(xn)): i
            for i, (x, a, xn) in enumerate(zip(self.tri_x, self.tri_a, self.tri_xn))
        }

    @cached_property
    def pair_to_triples(self) -> np.ndarray:
        """Incidence matrix (n_pairs, n_triples): row p sums the triples of pair p."""
        mat = np.zeros((self.n_pairs, self.n_triples))
        mat[self.tri_pair, np.arange(self.n_triples)] = 1.0
        return mat


@dataclass(frozen=True)
class LoopFreeCmdp:
    """Ground-truth environment: layered transitions plus constraint thresholds.

    ``transition`` has shape ``(n_states, n_actions, n_states)``; rows of the
    terminal state are ignored and must be zero.
    """

    layout: Layout
    transition: np.ndarray
    alpha: np.ndarray
    tol: float = DEFAULT_TOL

    def __post_init__(self):
        lay = self.layout
        P = np.asarray(self.transition, dtype=float)
        alpha = np.atleast_1d(np.asarray(self.alpha, dtype=float))
        if P.shape != (lay.n_states, lay.n_actions, lay.n_states):
            raise StructureError(f"transition has shape {P.shape}, expected "
                                 f"{(lay.n_states, lay.n_actions, lay.n_states)}")
        if np.any(P < 0) or np.any(P > 1 + self.tol):
            raise StructureError("transition probabilities must lie in [0, 1]")
        mask = np.zeros_like(P, dtype=bool)
        mask[lay.tri_x, lay.tri_a, lay.tri_xn] = True
        bad = np.argwhere((P != 0) & ~mask)
        if len(bad):
            x, a, xn = bad[0]
            raise StructureError(f"P({xn}|{x},{a}) > 0 but {xn} is not in the next layer of {x}")
        sums = P[:-1].sum(axis=2)
        err = np.abs(sums - 1.0)
        if np.max(err) > max(self.tol, 1e-12):
            x, a = np.unravel_index(np.argmax(err), err.shape)
            raise StructureError(f"transition row (x={x}, a={a}) sums to {sums[x, a]:.12g}, not 1")
        if alpha.ndim != 1 or len(alpha) < 1:
            raise StructureError("alpha must be a non-empty vector")
        if np.any(alpha < 0) or np.any(alpha > lay.horizon):
            raise StructureError(f"thresholds must lie in [0, L={lay.horizon}], got {alpha}")
        P.setflags(write=False)
        alpha.setflags(write=False)
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "alpha", alpha)

    @property
    def horizon(self) -> int:
        return self.layout.horizon

    @property
    def n_constraints(self) -> int:
        return len(self.alpha)

    @cached_property
    def p3(self) -> np.ndarray:
        """Transition probabilities on the flat triple index."""
        lay = self.layout
        return self.transition[lay.tri_x, lay.tri_a, lay.tri_xn]


@dataclass(frozen=True)
class Policy:
    """Stochastic policy, ``probs[x, a]`` for every non-terminal state."""

    layout: Layout
    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        expected = (self.layout.n_states - 1, self.layout.n_actions)
        if probs.shape != expected:
            raise StructureError(f"policy has shape {probs.shape}, expected {expected}")
        if np.any(probs < -1e-12):
            raise StructureError("policy has negative entries")
        if np.max(np.abs(probs.sum(axis=1) - 1.0)) > 1e-12 * max(1, self.layout.n_actions):
            raise StructureError("policy rows must sum to 1")
        probs = np.clip(probs, 0.0, None)
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)

    @classmethod
    def uniform(cls, layout: Layout) -> "Policy":
        n = layout.n_states - 1
        return cls(layout, np.full((n, layout.n_actions), 1.0 / layout.n_actions))

    @classmethod
    def deterministic(cls, layout: Layout, actions) -> "Policy":
        n = layout.n_states - 1
        probs = np.zeros((n, layout.n_actions))
        probs[np.arange(n), np.asarray(actions, dtype=int)] = 1.0
        return cls(layout, probs)


@dataclass(frozen=True)
class OccupancyMeasure:
    """Occupancy measure on the flat triple index of ``layout``."""

    layout: Layout
    q3: np.ndarray

    def __post_init__(self):
        q3 = np.asarray(self.q3, dtype=float)
        if q3.shape != (self.layout.n_triples,):
            raise StructureError(f"q3 has shape {q3.shape}, expected ({self.layout.n_triples},)")
        q3.setflags(write=False)
        object.__setattr__(self, "q3", q3)

    @classmethod
    def from_dict(cls, layout: Layout, entries: dict) -> "OccupancyMeasure":
        q3 = np.zeros(layout.n_triples)
        index = layout.triple_index
        for (x, a, xn), v in entries.items():
            if (x, a, xn) not in index:
                raise StructureError(f"triple ({x}, {a}, {xn}) is not layer-adjacent")
            q3[index[(x, a, xn)]] = v
        return cls(layout, q3)

    @cached_property
    def q2(self) -> np.ndarray:
        return np.bincount(self.layout.tri_pair, weights=self.q3, minlength=self.layout.n_pairs)

    @cached_property
    def q1(self) -> np.ndarray:
        lay = self.layout
        q1 = np.zeros(lay.n_states)
        q1[:-1] = self.q2.reshape(-1, lay.n_actions).sum(axis=1)
        # terminal mass is the inflow of the last layer
        q1[-1] = self.q3[lay.tri_layer == lay.horizon - 1].sum()
        return q1


@dataclass
class ValidationReport:
    valid: bool
    max_residual: float
    worst: str
    residuals: dict = field(default_factory=dict)

    def __bool__(self):
        return self.valid


def validate_occupancy(q: OccupancyMeasure, tol: float = DEFAULT_TOL) -> ValidationReport:
    """Check per-layer mass, flow conservation and nonnegativity."""
    lay = q.layout
    q3 = q.q3
    res = {}
    layer_mass = np.bincount(lay.tri_layer, weights=q3, minlength=lay.horizon)
    for k in range(lay.horizon):
        res[f"layer_mass[{k}]"] = abs(layer_mass[k] - 1.0)
    outflow = np.bincount(lay.tri_x, weights=q3, minlength=lay.n_states)
    inflow = np.bincount(lay.tri_xn, weights=q3, minlength=lay.n_states)
    for x in range(lay.layer_start[1], lay.layer_start[lay.horizon]):
        res[f"flow[x={x}]"] = abs(outflow[x] - inflow[x])
    if len(q3):
        i = int(np.argmin(q3))
        res[f"nonneg[{lay.tri_x[i]},{lay.tri_a[i]},{lay.tri_xn[i]}]"] = max(0.0, -q3[i])
    worst = max(res, key=res.get)
    return ValidationReport(bool(res[worst] <= tol), float(res[worst]), worst, res)


def occupancy_from_policy(cmdp: LoopFreeCmdp, pi: Policy) -> OccupancyMeasure:
    """Forward pass: q(x, a, x') = reach(x) pi(a|x) P(x'|x, a)."""
    lay = cmdp.layout
    if pi.layout != lay:
        raise StructureError("policy and CMDP have different layouts")
    return OccupancyMeasure(lay, _forward(lay, cmdp.p3, pi.probs))


def occupancy_from_transition(layout: Layout, p3: np.ndarray, probs: np.ndarray) -> OccupancyMeasure:
    """Same forward pass for an arbitrary triple-indexed transition ``p3``."""
    return OccupancyMeasure(layout, _forward(layout, p3, probs))


def _forward(lay: Layout, p3: np.ndarray, probs: np.ndarray) -> np.ndarray:
    reach = np.zeros(lay.n_states)
    reach[0] = 1.0
    q3 = np.zeros(lay.n_triples)
    start = 0
    for k in range(lay.horizon):
        stop = start + lay.layer_sizes[k] * lay.n_actions * lay.layer_sizes[k + 1]
        sl = slice(start, stop)
        x = lay.tri_x[sl]
        q3[sl] = reach[x] * probs[x, lay.tri_a[sl]] * p3[sl]
        np.add.at(reach, lay.tri_xn[sl], q3[sl])
        start = stop
    return q3


def policy_from_occupancy(q: OccupancyMeasure) -> Policy:
    """pi(a|x) = q(x, a) / q(x); states with zero mass get the uniform policy."""
    lay = q.layout
    q2 = np.clip(q.q2, 0.0, None).reshape(-1, lay.n_actions)
    mass = q2.sum(axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        probs = np.where(mass > 0, q2 / mass, 1.0 / lay.n_actions)
    probs /= probs.sum(axis=1, keepdims=True)
    return Policy(lay, probs)


def transition_from_occupancy(q: OccupancyMeasure) -> np.ndarray:
    """P^q on the flat triple index; zero-mass pairs get a uniform next-layer row."""
    lay = q.layout
    q3 = np.clip(q.q3, 0.0, None)
    q2 = np.bincount(lay.tri_pair, weights=q3, minlength=lay.n_pairs)
    width = np.array(lay.layer_sizes)[lay.tri_layer + 1]
    denom = q2[lay.tri_pair]
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(denom > 0, q3 / denom, 1.0 / width)


def transition_matrix(layout: Layout, p3: np.ndarray) -> np.ndarray:
    P = np.zeros((layout.n_states, layout.n_actions, layout.n_states))
    P[layout.tri_x, layout.tri_a, layout.tri_xn] = p3
    return P


def expected_reward(q: OccupancyMeasure, r: np.ndarray) -> float:
    return float(q.q2 @ np.asarray(r, dtype=float))


def expected_costs(q: OccupancyMeasure, G: np.ndarray) -> np.ndarray:
    """G has shape (n_pairs, m); returns G^T q."""
    return np.asarray(G, dtype=float).T @ q.q2


@dataclass(frozen=True)
class EpisodeFeedback:
    """Bandit feedback of one episode: the visited path and its samples."""

    states: np.ndarray   # (L + 1,), includes the terminal state
    actions: np.ndarray  # (L,)
    rewards: np.ndarray  # (L,)
    costs: np.ndarray    # (L, m)

    def path(self):
        return list(zip(self.states[:-1].tolist(), self.actions.tolist()))


def pair_indices(feedback: EpisodeFeedback, layout: Layout) -> np.ndarray:
    return feedback.states[:-1] * layout.n_actions + feedback.actions


def sample_episode(cmdp: LoopFreeCmdp, pi: Policy, reward_mean, cost_mean, rng,
                   law: str = "bernoulli") -> EpisodeFeedback:
    """Play one episode of ``pi``; only visited pairs produce observations.

    ``reward_mean`` is the (n_pairs,) mean vector and ``cost_mean`` the
    (n_pairs, m) mean matrix of the current episode. ``law`` is ``"bernoulli"``
    (samples in {0, 1}) or ``"mean"`` (the means themselves).
    """
    lay = cmdp.layout
    L = lay.horizon
    m = cmdp.n_constraints
    cost_mean = np.asarray(cost_mean, dtype=float).reshape(lay.n_pairs, m)
    u = rng.random((L, 3 + m))
    probs = pi.probs
    P = cmdp.transition
    states = np.empty(L + 1, dtype=np.int64)
    actions = np.empty(L, dtype=np.int64)
    rewards = np.empty(L)
    costs = np.empty((L, m))
    x = 0
    for k in range(L):
        states[k] = x
        a = _inverse_cdf(probs[x], u[k, 0])
        actions[k] = a
        p = x * lay.n_actions + a
        if law == "bernoulli":
            rewards[k] = 1.0 if u[k, 1] < reward_mean[p] else 0.0
            costs[k] = (u[k, 3:] < cost_mean[p]).astype(float)
        elif law == "mean":
            rewards[k] = reward_mean[p]
            costs[k] = cost_mean[p]
        else:
            raise ValueError(f"unknown sampling law {law!r}")
        x = _inverse_cdf(P[x, a], u[k, 2])
    states[L] = x
    return EpisodeFeedback(states, actions, rewards, costs)


def _inverse_cdf(p: np.ndarray, u: float) -> int:
    c = 0.0
    last = 0
    for i in range(len(p)):
        if p[i] > 0:
            c += p[i]
            last = i
            if u < c:
                return i
    return last


def random_cmdp(layer_sizes, n_actions: int, n_constraints: int, rng, alpha=None,
                sparsity: float = 0.0) -> LoopFreeCmdp:
    """Random transitions (Dirichlet rows); used by tests and fixture generation."""
    lay = Layout(layer_sizes, n_actions)
    P = np.zeros((lay.n_states, lay.n_actions, lay.n_states))
    for k in range(lay.horizon):
        nxt = lay.states_in_layer(k + 1)
        for x in lay.states_in_layer(k):
            for a in range(n_actions):
                w = rng.dirichlet(np.ones(len(nxt)))
                if sparsity > 0 and len(nxt) > 1:
                    w[rng.random(len(nxt)) < sparsity] = 0.0
                    if w.sum() == 0:
                        w[rng.integers(len(nxt))] = 1.0
                    w /= w.sum()
                P[x, a, nxt.start:nxt.stop] = w
    if alpha is None:
        alpha = np.full(n_constraints, lay.horizon / 2)
    return LoopFreeCmdp(lay, P, alpha)


def random_policy(layout: Layout, rng, concentration: float = 1.0) -> Policy:
    probs = rng.dirichlet(np.full(layout.n_actions, concentration), size=layout.n_states - 1)
    return Policy(layout, probs / probs.sum(axis=1, keepdims=True))


def loop_free_from_stationary(transition: np.ndarray, horizon: int, initial_state: int = 0):
    """Unroll a horizon-L MDP on states S into a loop-free one by duplicating states.

    Layer k holds the copies (s, k) reachable from ``initial_state`` in k steps
    (layer 0 is the initial state alone) and a single absorbing terminal layer
    is appended after layer ``horizon - 1``. Returns ``(layout, P, state_map)``
    where ``state_map[k]`` lists the original state of every copy in layer k.
    """
    T = np.asarray(transition, dtype=float)
    n_s, n_a, _ = T.shape
    layers = [[initial_state]]
    for _ in range(1, horizon):
        reach = set()
        for s in layers[-1]:
            reach.update(np.nonzero(T[s].sum(axis=0) > 0)[0].tolist())
        layers.append(sorted(reach))
    layers.append([-1])  # terminal
    lay = Layout([len(l) for l in layers], n_a)
    P = np.zeros((lay.n_states, n_a, lay.n_states))
    for k in range(horizon):
        base = lay.layer_start[k]
        nxt_base = lay.layer_start[k + 1]
        for i, s in enumerate(layers[k]):
            for a in range(n_a):
                if k == horizon - 1:
                    P[base + i, a, nxt_base] = 1.0
                else:
                    for j, s2 in enumerate(layers[k + 1]):
                        P[base + i, a, nxt_base + j] = T[s, a, s2]
    return lay, P, layers[:-1]
