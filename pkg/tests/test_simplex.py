"""Dense simplex LP solver: optima, statuses, and random cross-checks."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sncbf.simplex import (
    LpResult,
    lp_feasible_point,
    lp_maximize,
    lp_minimize,
    solve_lp,
)


def test_simple_bounded_minimum():
    # min x + y  s.t.  x >= 1, y >= 2  (free variables)
    res = solve_lp(
        np.array([1.0, 1.0]),
        np.array([[-1.0, 0.0], [0.0, -1.0]]),
        np.array([-1.0, -2.0]),
    )
    assert res.status == "feasible"
    assert res.value == pytest.approx(3.0)
    assert res.x == pytest.approx([1.0, 2.0])


def test_box_constrained_maximum():
    # max 2x + 3y over [0,1]^2 -> 5 at (1,1)
    A = np.array([[1.0, 0], [-1, 0], [0, 1], [0, -1]])
    b = np.array([1.0, 0.0, 1.0, 0.0])
    res = lp_maximize(np.array([2.0, 3.0]), A, b)
    assert res.status == "feasible"
    assert res.value == pytest.approx(5.0)
    assert res.x == pytest.approx([1.0, 1.0])


def test_infeasible():
    # x <= -1 and x >= 1
    res = solve_lp(np.array([1.0]), np.array([[1.0], [-1.0]]), np.array([-1.0, -1.0]))
    assert res.status == "infeasible"
    assert not res.feasible


def test_unbounded():
    res = solve_lp(np.array([-1.0]), np.array([[-1.0]]), np.array([0.0]))
    assert res.status == "unbounded"


def test_equality_constraints():
    # min x + y s.t. x + y = 2, x - y = 0 -> (1,1)
    res = solve_lp(
        np.array([1.0, 1.0]),
        None,
        None,
        A_eq=np.array([[1.0, 1.0], [1.0, -1.0]]),
        b_eq=np.array([2.0, 0.0]),
    )
    assert res.status == "feasible"
    assert res.x == pytest.approx([1.0, 1.0])


def test_negative_optimum_free_variables():
    # min x over x >= -5: free variables must go negative
    res = lp_minimize(np.array([1.0]), np.array([[-1.0]]), np.array([5.0]))
    assert res.status == "feasible"
    assert res.value == pytest.approx(-5.0)


def test_feasible_point_satisfies_constraints():
    A = np.array([[1.0, 1.0], [-1.0, 0.0], [0.0, -1.0]])
    b = np.array([1.0, 0.0, 0.0])
    res = lp_feasible_point(A, b, None, None, 2)
    assert res.feasible
    assert np.all(A @ res.x <= b + 1e-7)


def test_feasible_point_none_when_empty():
    A = np.array([[1.0], [-1.0]])
    b = np.array([-2.0, 1.0])  # x <= -2 and x >= -1
    assert not lp_feasible_point(A, b, None, None, 1).feasible


def test_maximize_negates_consistently():
    A = np.array([[1.0], [-1.0]])
    b = np.array([3.0, 1.0])  # -1 <= x <= 3
    mx = lp_maximize(np.array([1.0]), A, b)
    mn = lp_minimize(np.array([1.0]), A, b)
    assert mx.value == pytest.approx(3.0)
    assert mn.value == pytest.approx(-1.0)


def test_degenerate_vertex_terminates():
    # Many redundant constraints through one vertex (Bland's rule must not cycle).
    A = np.array([[-1.0, 0], [0, -1], [-1, -1], [-2, -1], [-1, -2]])
    b = np.zeros(5)
    res = lp_minimize(np.array([1.0, 1.0]), A, b)
    assert res.status == "feasible"
    assert res.value == pytest.approx(0.0)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000))
def test_random_box_lp_matches_vertex_enumeration(seed):
    """On a random box with a random linear objective the optimum is a
    corner; compare against explicit corner enumeration."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 4))
    lo = rng.uniform(-3, 0, n)
    hi = lo + rng.uniform(0.1, 3, n)
    c = rng.uniform(-2, 2, n)
    A = np.vstack([np.eye(n), -np.eye(n)])
    b = np.concatenate([hi, -lo])
    res = lp_minimize(c, A, b)
    assert res.status == "feasible"
    best = min(
        float(c @ np.where(np.array(mask), hi, lo))
        for mask in np.ndindex(*([2] * n))
    )
    assert res.value == pytest.approx(best, abs=1e-7)
    assert np.all(A @ res.x <= b + 1e-7)


def test_result_dataclass_fields():
    res = LpResult("feasible", np.zeros(1), 0.0)
    assert res.feasible
    assert LpResult("infeasible", None, np.nan).feasible is False
