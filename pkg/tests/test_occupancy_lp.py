import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nscmdp.cmdp import Layout, LoopFreeCmdp, Policy, occupancy_from_policy, random_cmdp, random_policy
from nscmdp.occupancy_lp import (INFEASIBLE, OPTIMAL, PolytopeSpec, build_problem, feasibility_rho,
                                 lagrangian_max, solve_opt, solve_opt_cb, solve_positive_lagrangian,
                                 structural_point, write_lp_file)

from conftest import two_action_example
from oracles import occupancy_rows, vertex_enumeration


def test_two_action_closed_form():
    inst = two_action_example()
    poly = PolytopeSpec.exact(inst.cmdp)
    sol = solve_opt(poly, inst.reward, inst.costs, inst.cmdp.alpha)
    assert sol.status == OPTIMAL
    assert sol.objective == pytest.approx(0.5, abs=1e-12)
    assert sol.q.q2[0] == pytest.approx(0.5, abs=1e-12)
    assert sol.duals[0] == pytest.approx(1.0, abs=1e-9)
    assert feasibility_rho(poly, inst.costs, inst.cmdp.alpha) == pytest.approx(0.5, abs=1e-12)
    lag = solve_positive_lagrangian(poly, inst.reward, inst.costs, inst.cmdp.alpha, 2.0)
    assert lag.objective == pytest.approx(0.5, abs=1e-9)


def test_all_ones_cost_is_infeasible():
    inst = two_action_example()
    lay = inst.layout
    cmdp = LoopFreeCmdp(lay, inst.cmdp.transition, [0.0])
    poly = PolytopeSpec.exact(cmdp)
    G = np.ones((lay.n_pairs, 1))
    assert solve_opt(poly, inst.reward, G, [0.0]).status == INFEASIBLE
    assert feasibility_rho(poly, G, [0.0]) == pytest.approx(-lay.horizon)


def test_chain_objective_and_zero_costs():
    lay = Layout([1, 1, 1, 1], 1)
    P = np.zeros((4, 1, 4))
    for x in range(3):
        P[x, 0, x + 1] = 1
    cmdp = LoopFreeCmdp(lay, P, [0.3, 0.7])
    poly = PolytopeSpec.exact(cmdp)
    r = np.array([0.1, 0.4, 0.25])
    sol = solve_opt(poly, r, np.zeros((3, 2)), cmdp.alpha)
    assert sol.objective == pytest.approx(0.75)
    assert feasibility_rho(poly, np.zeros((3, 2)), cmdp.alpha) == pytest.approx(0.3)


def tiny_instance(rng):
    shape = [[1, 2, 1], [1, 1, 1, 1], [1, 3, 1]][int(rng.integers(3))]
    A = 1 if shape == [1, 3, 1] and rng.random() < 0.5 else 2
    m = int(rng.integers(1, 3))
    cmdp = random_cmdp(shape, A, m, rng, alpha=rng.uniform(0.2, 1.2, size=m), sparsity=0.3)
    n = cmdp.layout.n_pairs
    return cmdp, rng.random(n), rng.random((n, m))


@settings(max_examples=80, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_matches_vertex_enumeration(seed):
    rng = np.random.default_rng(seed)
    cmdp, r, G = tiny_instance(rng)
    A_eq, b_eq = occupancy_rows(cmdp)
    assert cmdp.layout.n_pairs - np.linalg.matrix_rank(A_eq) <= 6
    ref, _ = vertex_enumeration(r, G.T, cmdp.alpha, A_eq, b_eq)
    sol = solve_opt(PolytopeSpec.exact(cmdp), r, G, cmdp.alpha)
    if ref is None:
        assert sol.status == INFEASIBLE
    else:
        assert sol.status == OPTIMAL
        assert sol.objective == pytest.approx(ref, abs=1e-6)
        assert np.all(G.T @ sol.q.q2 <= cmdp.alpha + 1e-8)


def test_structural_point_is_an_occupancy(rng):
    cmdp = random_cmdp([1, 3, 2, 1], 2, 1, rng)
    poly = PolytopeSpec.exact(cmdp)
    sol = structural_point(poly)
    assert sol.feasible and poly.contains(sol.q)


def test_contains(rng):
    cmdp = random_cmdp([1, 2, 2, 1], 2, 1, rng)
    poly = PolytopeSpec.exact(cmdp)
    q = occupancy_from_policy(cmdp, random_policy(cmdp.layout, rng))
    assert poly.contains(q)
    from nscmdp.cmdp import OccupancyMeasure
    assert not poly.contains(OccupancyMeasure(cmdp.layout, q.q3 * 0.9))


def test_confidence_with_zero_radius_matches_exact(rng):
    for _ in range(10):
        cmdp = random_cmdp([1, 2, 2, 1], 2, 2, rng, alpha=[1.0, 1.4])
        r, G = rng.random(10), rng.random((10, 2))
        a = solve_opt(PolytopeSpec.exact(cmdp), r, G, cmdp.alpha)
        b = solve_opt_cb(PolytopeSpec.confidence(cmdp.layout, cmdp.p3, np.zeros(cmdp.layout.n_triples)),
                         r, G, cmdp.alpha)
        assert a.status == b.status
        if a.feasible:
            assert b.objective == pytest.approx(a.objective, abs=1e-8)
            np.testing.assert_allclose(b.q.q3, a.q.q3, atol=1e-7)


def best_path_value(lay, r):
    """max over all transition functions: dynamic programming over chosen successors."""
    V = np.zeros(lay.n_states)
    for k in reversed(range(lay.horizon)):
        nxt = max(V[x] for x in lay.states_in_layer(k + 1))
        for x in lay.states_in_layer(k):
            V[x] = max(r[lay.pair(x, a)] for a in range(lay.n_actions)) + nxt
    return V[0]


def test_vacuous_confidence_set(rng):
    lay = Layout([1, 3, 2, 1], 2)
    for _ in range(10):
        r = rng.random(lay.n_pairs)
        G = -rng.random((lay.n_pairs, 1))
        poly = PolytopeSpec.confidence(lay, np.full(lay.n_triples, 0.5), np.full(lay.n_triples, 10.0))
        sol = solve_opt_cb(poly, r, G, [0.5])
        assert sol.objective == pytest.approx(best_path_value(lay, r), abs=1e-9)


def test_optimism_contains_the_true_program(rng):
    for _ in range(25):
        cmdp = random_cmdp([1, 2, 2, 1], 2, 2, rng, alpha=[1.3, 1.5])
        lay = cmdp.layout
        r, G = rng.random(lay.n_pairs), rng.random((lay.n_pairs, 2))
        eps = rng.uniform(0.0, 0.3, lay.n_triples)
        p_bar = np.clip(cmdp.p3 + rng.uniform(-1, 1, lay.n_triples) * eps, 0, 1)
        conf = PolytopeSpec.confidence(lay, p_bar, eps)
        true = solve_opt(PolytopeSpec.exact(cmdp), r, G, cmdp.alpha)
        opt = solve_opt_cb(conf, r + rng.uniform(0, 0.1, lay.n_pairs),
                           G - rng.uniform(0, 0.1, G.shape), cmdp.alpha)
        if true.feasible:
            assert conf.contains(true.q)
            assert opt.feasible and opt.objective >= true.objective - 1e-8


def test_confidence_requires_confidence_mode(rng):
    cmdp = random_cmdp([1, 2, 1], 2, 1, rng)
    with pytest.raises(ValueError):
        solve_opt_cb(PolytopeSpec.exact(cmdp), np.zeros(4), np.zeros((4, 1)), [1.0])


def test_positive_lagrangian_basics(rng):
    cmdp = random_cmdp([1, 2, 2, 1], 2, 1, rng, alpha=[0.8])
    poly = PolytopeSpec.exact(cmdp)
    r, G = rng.random(10), rng.random((10, 1))
    free = solve_opt(poly, r, None, None)
    zero = solve_positive_lagrangian(poly, r, G, cmdp.alpha, 0.0)
    assert zero.objective == pytest.approx(free.objective, abs=1e-9)
    with pytest.raises(ValueError):
        solve_positive_lagrangian(poly, r, G, cmdp.alpha, -1.0)


def random_slater_instance(rng, min_rho=0.1):
    while True:
        m = int(rng.integers(1, 3))
        cmdp = random_cmdp([1, 2, 2, 1], 2, m, rng, alpha=rng.uniform(0.6, 2.0, m))
        G = rng.random((cmdp.layout.n_pairs, m))
        poly = PolytopeSpec.exact(cmdp)
        rho = feasibility_rho(poly, G, cmdp.alpha)
        if rho >= min_rho:
            return cmdp, poly, rng.random(cmdp.layout.n_pairs), G, rho


def test_positive_lagrangian_equals_opt_at_threshold(rng):
    for _ in range(30):
        cmdp, poly, r, G, rho = random_slater_instance(rng)
        opt = solve_opt(poly, r, G, cmdp.alpha)
        lag = solve_positive_lagrangian(poly, r, G, cmdp.alpha, cmdp.horizon / rho)
        assert lag.objective == pytest.approx(opt.objective, abs=1e-6)
        # a feasible q carries no penalty
        q2 = opt.q.q2
        assert np.maximum(G.T @ q2 - cmdp.alpha, 0).sum() <= 1e-9


def test_weak_duality(rng):
    cmdp, poly, r, G, _ = random_slater_instance(rng)
    opt = solve_opt(poly, r, G, cmdp.alpha).objective
    for lam in rng.random((20, cmdp.n_constraints)) * 3:
        assert lagrangian_max(poly, r, G, cmdp.alpha, lam) >= opt - 1e-9
    lam_star = solve_opt(poly, r, G, cmdp.alpha).duals
    assert lagrangian_max(poly, r, G, cmdp.alpha, lam_star) == pytest.approx(opt, abs=1e-8)


def test_lp_file(tmp_path):
    inst = two_action_example()
    lp = build_problem(PolytopeSpec.exact(inst.cmdp), inst.reward, inst.costs, inst.cmdp.alpha)
    path = tmp_path / "p.lp"
    write_lp_file(lp, path)
    text = path.read_text()
    assert text.startswith("\\") and "Maximize" in text and text.rstrip().endswith("End")
    assert text.count(" eq") == len(lp.b_eq) and text.count(" ub") == len(lp.b_ub)
