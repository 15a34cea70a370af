import numpy as np
import pytest

from nscmdp.adversary import DistributionSequence, make_sequence
from nscmdp.cmdp import Policy, occupancy_from_policy, policy_from_occupancy
from nscmdp.evaluation import InfeasibleOracle, loglog_slope, oracle, regret_violation, trace_from_q2
from nscmdp.instances import load_fixture


def stationary(inst, T):
    return make_sequence("stationary", {}, inst.reward, inst.costs, T, None)


def test_oracle_on_fixtures():
    a = load_fixture("two_action")
    orc = oracle(a.cmdp, stationary(a, 10))
    assert orc.opt_value == pytest.approx(0.5) and orc.rho == pytest.approx(0.5) and orc.slater
    np.testing.assert_array_equal(orc.r_bar, a.reward)
    b = load_fixture("four_layer")
    orc = oracle(b.cmdp, stationary(b, 3))
    assert orc.opt_value == pytest.approx(1.2598, abs=1e-4)
    assert orc.rho == pytest.approx(0.2078, abs=1e-4) and orc.rho >= 0.2


def test_oracle_depends_only_on_averages():
    inst = load_fixture("four_layer")
    seq = make_sequence("alternating", {"period": 3, "amplitude": 0.2}, inst.reward, inst.costs, 30, None)
    perm = seq.permuted(np.random.default_rng(0).permutation(30))
    a, b = oracle(inst.cmdp, seq), oracle(inst.cmdp, perm)
    assert a.opt_value == pytest.approx(b.opt_value, abs=1e-12)
    np.testing.assert_allclose(a.q_star.q3, b.q_star.q3, atol=1e-12)


def test_infeasible_oracle():
    inst = load_fixture("two_action")
    seq = make_sequence("fully_adversarial", {}, inst.reward, inst.costs, 10, None)
    with pytest.raises(InfeasibleOracle, match="no occupancy measure"):
        oracle(inst.cmdp, seq)


def test_optimal_policy_has_zero_regret_and_violation():
    inst = load_fixture("four_layer")
    T = 50
    seq = stationary(inst, T)
    orc = oracle(inst.cmdp, seq)
    pi = policy_from_occupancy(orc.q_star)
    tr = regret_violation([pi] * T, inst.cmdp, seq, orc)
    assert abs(tr.cum_regret[-1]) < 1e-9 and tr.cum_violation[-1] < 1e-9
    assert tr.regret_via_baseline() == pytest.approx(tr.cum_regret[-1], abs=1e-9)


def test_greedy_action_on_two_action_example():
    inst = load_fixture("two_action")
    T = 40
    seq = stationary(inst, T)
    orc = oracle(inst.cmdp, seq)
    pi = Policy.deterministic(inst.layout, [0, 0, 0])
    tr = regret_violation([pi] * T, inst.cmdp, seq, orc)
    np.testing.assert_allclose(tr.cum_violation, 0.5 * np.arange(1, T + 1))
    assert tr.cum_regret[-1] == pytest.approx(T * (0.5 - 1.0))
    assert tr.regret_via_baseline() == pytest.approx(-0.5 * T)


def test_violation_cannot_cancel():
    inst = load_fixture("two_action")
    T = 30
    seq = stationary(inst, T)
    orc = oracle(inst.cmdp, seq)
    lay = inst.layout
    over = occupancy_from_policy(inst.cmdp, Policy(lay, np.array([[0.8, 0.2], [.5, .5], [.5, .5]]))).q2
    under = occupancy_from_policy(inst.cmdp, Policy.deterministic(lay, [1, 0, 0])).q2
    tr = trace_from_q2(np.vstack([over] + [under] * (T - 1)), seq, inst.cmdp.alpha, orc)
    np.testing.assert_allclose(tr.cum_violation, 0.3)
    assert tr.pos_violation.shape == (T, 1)


def test_regret_two_routes_under_corruption():
    inst = load_fixture("four_layer")
    T = 200
    rng = np.random.default_rng(0)
    seq = make_sequence("budgeted", {"c_target": 20}, inst.reward, inst.costs, T, rng)
    orc = oracle(inst.cmdp, seq)
    q2 = np.array([occupancy_from_policy(inst.cmdp, Policy.uniform(inst.layout)).q2] * T)
    tr = trace_from_q2(q2, seq, inst.cmdp.alpha, orc)
    assert tr.regret_via_baseline() == pytest.approx(tr.cum_regret[-1], abs=1e-9)


def test_loglog_slope():
    t = np.arange(1, 10_001, dtype=float)
    assert loglog_slope(np.sqrt(t) * 5) == pytest.approx(0.5, abs=1e-12)
    assert loglog_slope(3 * t) == pytest.approx(1.0, abs=1e-12)
    assert loglog_slope(-t) == pytest.approx(0.0)
    assert loglog_slope(np.full(100, 0.5)) == pytest.approx(0.0)
    assert loglog_slope([1.0]) == 0.0
