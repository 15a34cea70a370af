"""Regenerate the four-layer fixture shipped in src/nscmdp/data."""

import numpy as np

from nscmdp.cmdp import random_cmdp, LoopFreeCmdp
from nscmdp.instances import Instance, format_instance
from nscmdp.occupancy_lp import PolytopeSpec, feasibility_rho, solve_opt


def four_layer(seed=7):
    rng = np.random.default_rng(seed)
    while True:
        base = random_cmdp([1, 2, 2, 1], 2, 2, rng)
        lay = base.layout
        r = np.round(rng.random(lay.n_pairs), 3)
        G = np.round(rng.random((lay.n_pairs, 2)), 3)
        poly = PolytopeSpec.exact(base)
        free = solve_opt(poly, r, None, None)
        low = np.array([solve_opt(poly, -G[:, i], None, None).objective for i in range(2)]) * -1
        greedy = G.T @ free.q.q2
        # thresholds halfway between the cheapest and the reward-greedy cost
        alpha = np.round(low + 0.5 * (greedy - low), 3)
        if np.any(greedy - low < 0.6):
            continue
        cmdp = LoopFreeCmdp(lay, np.round(base.transition, 3), alpha)
        P = cmdp.transition.copy()
        # re-normalise rounded rows on their last successor
        for x in range(lay.n_states - 1):
            for a in range(2):
                nz = np.nonzero(P[x, a])[0]
                P[x, a, nz[-1]] += 1.0 - P[x, a].sum()
        cmdp = LoopFreeCmdp(lay, P, alpha)
        poly = PolytopeSpec.exact(cmdp)
        rho = feasibility_rho(poly, G, alpha)
        opt = solve_opt(poly, r, G, alpha)
        if rho >= 0.2 and opt.objective < free.objective - 0.05:
            print(f"seed {seed}: rho={rho:.4f} opt={opt.objective:.4f} unconstrained={free.objective:.4f}")
            return Instance(cmdp, r, G)


if __name__ == "__main__":
    inst = four_layer()
    header = "# Four layers (|X| = 6), two actions, two constraints; Slater margin >= 0.2.\n"
    with open("src/nscmdp/data/four_layer.cmdp", "w") as fh:
        fh.write(header + format_instance(inst))
