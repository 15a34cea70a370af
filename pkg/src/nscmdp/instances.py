"""CMDP instance files and the shipped fixtures.

The format is line oriented; ``#`` starts a comment, blank lines are skipped::

    layers 1 2 1          # states per layer, first and last must be 1
    actions 2
    constraints 1
    alpha 0.5             # one threshold per constraint
    transition 0 0 0 1 1.0   # k x a x' p   (global state ids, x in layer k)
    reward 0 0 1.0           # x a mean
    cost 0 0 0 1.0           # i x a mean

Unlisted transitions, rewards and costs are zero.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .cmdp import Layout, LoopFreeCmdp, StructureError


@dataclass(frozen=True, eq=False)
class Instance:
    cmdp: LoopFreeCmdp
    reward: np.ndarray   # (n_pairs,)
    costs: np.ndarray    # (n_pairs, m)

    @property
    def layout(self) -> Layout:
        return self.cmdp.layout


class InstanceFormatError(ValueError):
    pass


def parse_instance(text: str, source: str = "<string>") -> Instance:
    head: dict = {}
    trans, rew, cost = [], [], []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, *vals = line.split()
        where = f"{source}:{lineno}"
        try:
            if key == "layers":
                head["layers"] = [int(v) for v in vals]
            elif key in ("actions", "constraints"):
                head[key] = int(vals[0])
            elif key == "alpha":
                head["alpha"] = [float(v) for v in vals]
            elif key == "transition":
                k, x, a, xn = (int(v) for v in vals[:4])
                trans.append((where, k, x, a, xn, float(vals[4])))
            elif key == "reward":
                rew.append((where, int(vals[0]), int(vals[1]), float(vals[2])))
            elif key == "cost":
                cost.append((where, int(vals[0]), int(vals[1]), int(vals[2]), float(vals[3])))
            else:
                raise InstanceFormatError(f"{where}: unknown key {key!r}")
        except (IndexError, ValueError) as exc:
            if isinstance(exc, InstanceFormatError):
                raise
            raise InstanceFormatError(f"{where}: malformed {key!r} row: {raw.strip()!r}") from None
    for key in ("layers", "actions", "alpha"):
        if key not in head:
            raise InstanceFormatError(f"{source}: missing {key!r}")
    lay = Layout(head["layers"], head["actions"])
    m = head.get("constraints", len(head["alpha"]))
    if len(head["alpha"]) != m:
        raise InstanceFormatError(f"{source}: {m} constraints but {len(head['alpha'])} thresholds")

    P = np.zeros((lay.n_states, lay.n_actions, lay.n_states))
    for where, k, x, a, xn, p in trans:
        if not 0 <= k < lay.horizon:
            raise StructureError(f"{where}: layer {k} out of range")
        if not (0 <= x < lay.n_states and 0 <= xn < lay.n_states and 0 <= a < lay.n_actions):
            raise StructureError(f"{where}: index out of range")
        if lay.layer_of[x] != k or lay.layer_of[xn] != k + 1:
            raise StructureError(f"{where}: ({x}, {a}, {xn}) does not go from layer {k} to layer {k + 1}")
        P[x, a, xn] = p
    r = np.zeros(lay.n_pairs)
    G = np.zeros((lay.n_pairs, m))
    for where, x, a, v in rew:
        r[_pair(lay, x, a, where)] = v
    for where, i, x, a, v in cost:
        if not 0 <= i < m:
            raise StructureError(f"{where}: constraint {i} out of range")
        G[_pair(lay, x, a, where), i] = v
    for name, v in (("reward", r), ("cost", G)):
        if v.size and (v.min() < 0 or v.max() > 1):
            raise StructureError(f"{source}: {name} means must lie in [0, 1]")
    return Instance(LoopFreeCmdp(lay, P, head["alpha"]), r, G)


def _pair(lay: Layout, x: int, a: int, where: str) -> int:
    if not (0 <= x < lay.terminal and 0 <= a < lay.n_actions):
        raise StructureError(f"{where}: pair ({x}, {a}) does not exist")
    return lay.pair(x, a)


def load_instance(path) -> Instance:
    path = Path(path)
    return parse_instance(path.read_text(), str(path))


def format_instance(inst: Instance) -> str:
    lay, c = inst.layout, inst.cmdp
    out = [f"layers {' '.join(map(str, lay.layer_sizes))}", f"actions {lay.n_actions}",
           f"constraints {c.n_constraints}", "alpha " + " ".join(repr(float(a)) for a in c.alpha)]
    for x, a, xn, p in zip(lay.tri_x, lay.tri_a, lay.tri_xn, c.p3):
        if p != 0:
            out.append(f"transition {lay.layer_of[x]} {x} {a} {xn} {float(p)!r}")
    for p in range(lay.n_pairs):
        x, a = divmod(p, lay.n_actions)
        if inst.reward[p] != 0:
            out.append(f"reward {x} {a} {float(inst.reward[p])!r}")
        for i in range(c.n_constraints):
            if inst.costs[p, i] != 0:
                out.append(f"cost {i} {x} {a} {float(inst.costs[p, i])!r}")
    return "\n".join(out) + "\n"


FIXTURES = ("two_action", "four_layer")


def fixture_path(name: str) -> Path:
    if name not in FIXTURES:
        raise KeyError(f"unknown fixture {name!r}; available: {FIXTURES}")
    return Path(str(resources.files("nscmdp") / "data" / f"{name}.cmdp"))


def load_fixture(name: str) -> Instance:
    return load_instance(fixture_path(name))
