import itertools

import numpy as np
import pytest

from nscmdp.cmdp import Layout, random_cmdp


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_layers(rng, max_layers=5, max_states=10, max_width=3):
    """Layer sizes with singleton ends, at most ``max_states`` states in total."""
    L = int(rng.integers(1, max_layers + 1))
    inner = []
    budget = max_states - 2
    for _ in range(L - 1):
        w = int(rng.integers(1, max_width + 1))
        w = min(w, budget - (L - 2 - len(inner)))
        w = max(w, 1)
        inner.append(w)
        budget -= w
    return [1] + inner + [1]


def path_occupancy(cmdp, probs):
    """Triple occupancies by enumerating every trajectory (independent of the forward pass)."""
    lay = cmdp.layout
    P = cmdp.transition
    q3 = np.zeros(lay.n_triples)
    index = lay.triple_index
    layers = [list(lay.states_in_layer(k)) for k in range(lay.horizon + 1)]

    def walk(k, x, prob):
        if k == lay.horizon or prob == 0:
            return
        for a in range(lay.n_actions):
            for xn in layers[k + 1]:
                p = prob * probs[x, a] * P[x, a, xn]
                if p:
                    q3[index[(x, a, xn)]] += p
                    walk(k + 1, xn, p)

    walk(0, 0, 1.0)
    return q3


def two_action_example():
    """Root with two actions into a two-state middle layer, then the terminal."""
    from nscmdp.instances import load_fixture
    return load_fixture("two_action")


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
