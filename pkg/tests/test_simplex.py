import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import linprog

from nscmdp.simplex import INFEASIBLE, OPTIMAL, UNBOUNDED, solve_lp


def test_single_bound():
    res = solve_lp([1.0], [[1.0]], [0.5])
    assert res.status == OPTIMAL
    assert res.objective == pytest.approx(0.5)
    assert res.duals_ub[0] == pytest.approx(1.0)


def test_infeasible_and_unbounded():
    assert solve_lp([1.0], [[1.0]], [-1.0]).status == INFEASIBLE
    assert solve_lp([1.0, 0.0], [[0.0, 1.0]], [1.0]).status == UNBOUNDED
    res = solve_lp([0.0, 0.0], A_eq=[[1.0, 1.0], [1.0, 1.0]], b_eq=[1.0, 2.0])
    assert res.status == INFEASIBLE and res.phase1_value > 0


def test_redundant_equalities():
    res = solve_lp([1.0, 2.0], A_eq=[[1.0, 1.0], [2.0, 2.0]], b_eq=[1.0, 2.0])
    assert res.status == OPTIMAL
    np.testing.assert_allclose(res.x, [0.0, 1.0], atol=1e-12)


def test_degenerate_ties_are_repeatable():
    # every vertex of the simplex is optimal for c = 1
    c = np.ones(4)
    A_eq = np.ones((1, 4))
    first = solve_lp(c, A_eq=A_eq, b_eq=[1.0])
    for _ in range(5):
        again = solve_lp(c, A_eq=A_eq, b_eq=[1.0])
        np.testing.assert_array_equal(again.x, first.x)


@settings(max_examples=150, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_matches_highs(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 9))
    m_ub = int(rng.integers(0, 6))
    m_eq = int(rng.integers(0, 3))
    c = rng.normal(size=n)
    # a box row keeps every instance bounded
    A_ub = np.vstack([rng.normal(size=(m_ub, n)), np.ones((1, n))])
    b_ub = np.concatenate([rng.normal(size=m_ub) + 1.0, [5.0]])
    A_eq = rng.normal(size=(m_eq, n))
    b_eq = A_eq @ rng.random(n) if rng.random() < 0.8 else rng.normal(size=m_eq)
    ref = linprog(-c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq if m_eq else None,
                  b_eq=b_eq if m_eq else None, bounds=(0, None), method="highs")
    res = solve_lp(c, A_ub, b_ub, A_eq, b_eq)
    if ref.status == 2:
        assert res.status == INFEASIBLE
    else:
        assert ref.status == 0
        assert res.status == OPTIMAL
        assert res.objective == pytest.approx(-ref.fun, abs=1e-7)
        assert res.residual < 1e-8
