"""Tests for the tableau simplex."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mechsynth.lp import (
    DimensionMismatch,
    LinearProgram,
    LpBuilder,
    LpStatus,
    Relation,
    Sense,
    check_feasible_lp,
    row_residuals,
    solve_by_vertex_enumeration,
    solve_lp,
)


# ---------------------------------------------------------------------------
# Small programs with known optima
# ---------------------------------------------------------------------------

def test_max_sum_under_cap():
    lp = LinearProgram.from_rows([1, 1], [([1, 1], "<=", 2)])
    sol = solve_lp(lp)
    assert sol.status is LpStatus.OPTIMAL
    assert sol.objective_value == pytest.approx(2.0)
    assert sol.values.sum() == pytest.approx(2.0)


def test_textbook_optimum_and_strong_duality():
    lp = LinearProgram.from_rows([1, 1], [([1, 2], "<=", 4), ([3, 1], "<=", 6)])
    sol = solve_lp(lp)
    np.testing.assert_allclose(sol.values, [1.6, 1.2], atol=1e-9)
    assert sol.objective_value == pytest.approx(2.8)
    assert sol.dual_objective == pytest.approx(2.8)
    assert sol.dual_feasible


def test_minimisation():
    lp = LinearProgram.from_rows([2, 3], [([1, 1], ">=", 4), ([1, 0], "<=", 3)], sense=Sense.MIN)
    sol = solve_lp(lp)
    assert sol.objective_value == pytest.approx(9.0)
    np.testing.assert_allclose(sol.values, [3.0, 1.0], atol=1e-9)


def test_equality_row_with_bounds():
    lp = LinearProgram.from_rows([1, 0], [([1, 1], "==", 1)], bounds=[(0, math.inf), (0.25, 1)])
    sol = solve_lp(lp)
    assert sol.objective_value == pytest.approx(0.75)


def test_free_variable():
    lp = LinearProgram.from_rows([1], [([1], ">=", -3)], bounds=[(-math.inf, math.inf)], sense=Sense.MIN)
    sol = solve_lp(lp)
    assert sol.values[0] == pytest.approx(-3.0)


def test_upper_bound_only():
    lp = LinearProgram.from_rows([1], [], bounds=[(-math.inf, 5)])
    assert solve_lp(lp).objective_value == pytest.approx(5.0)


def test_infeasible():
    lp = LinearProgram.from_rows([1], [([1], ">=", 1), ([1], "<=", 0)])
    assert solve_lp(lp).status is LpStatus.INFEASIBLE


def test_infeasible_bounds_and_rows():
    lp = LinearProgram.from_rows([0, 0], [([1, 1], ">=", 3)], bounds=[(0, 1), (0, 1)])
    assert solve_lp(lp).status is LpStatus.INFEASIBLE


def test_unbounded():
    lp = LinearProgram.from_rows([1, 0], [([0, 1], "<=", 1)])
    assert solve_lp(lp).status is LpStatus.UNBOUNDED


def test_degenerate_program_terminates():
    rows = [([1, 1, 0], "<=", 1), ([1, 0, 1], "<=", 1), ([0, 1, 1], "<=", 1), ([1, 1, 1], "<=", 1.5)]
    sol = solve_lp(LinearProgram.from_rows([1, 1, 1], rows))
    assert sol.objective_value == pytest.approx(1.5)


def test_deterministic_solution():
    lp = LinearProgram.from_rows([1, 1, 1], [([1, 1, 1], "<=", 1)])
    first = solve_lp(lp).values
    second = solve_lp(lp).values
    np.testing.assert_array_equal(first, second)


# ---------------------------------------------------------------------------
# Builder and helpers
# ---------------------------------------------------------------------------

def test_builder_accumulates_terms():
    b = LpBuilder()
    x = b.add_var(cost=1.0)
    y = b.add_var(hi=2.0)
    b.add_cost(y, 1.0)
    b.add_row([(x, 1.0), (y, 0.5), (y, 0.5)], Relation.LE, 3.0)
    lp = b.build(Sense.MAX)
    assert lp.A.tolist() == [[1.0, 1.0]]
    assert solve_lp(lp).objective_value == pytest.approx(3.0)


def test_add_vars_shape():
    b = LpBuilder()
    b.add_var()
    block = b.add_vars((2, 3), lo=0.0, hi=1.0)
    assert block.shape == (2, 3)
    assert block[0, 0] == 1 and block[1, 2] == 6
    assert b.n_vars == 7


def test_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        LinearProgram.from_rows([1, 1], [([1], "<=", 1)])
    with pytest.raises(DimensionMismatch):
        LinearProgram.from_rows([1, 1], [], bounds=[(0, 1)])


def test_inverted_bounds_rejected():
    lp = LinearProgram.from_rows([1], [], bounds=[(2, 1)])
    with pytest.raises(DimensionMismatch):
        solve_lp(lp)


def test_check_feasible_returns_witness():
    res = check_feasible_lp([([1, 1], "==", 1), ([1, -1], ">=", 0)], [(0, 1), (0, 1)])
    assert res.feasible
    assert res.witness[0] >= res.witness[1] - 1e-9
    assert res.witness.sum() == pytest.approx(1.0)
    assert not check_feasible_lp([([1], ">=", 2)], [(0, 1)]).feasible


def test_row_residuals_signs():
    lp = LinearProgram.from_rows([0, 0], [([1, 0], "<=", 1), ([0, 1], ">=", 1), ([1, 1], "==", 2)])
    res = row_residuals(lp, np.array([0.5, 2.0]))
    np.testing.assert_allclose(res, [0.5, 1.0, -0.5])


# ---------------------------------------------------------------------------
# Cross-check against vertex enumeration
# ---------------------------------------------------------------------------

@settings(max_examples=60, deadline=None)
@given(seed=st.integers(min_value=0, max_value=100_000), d=st.integers(1, 3), k=st.integers(1, 3))
def test_matches_vertex_enumeration(seed, d, k):
    rng = np.random.default_rng(seed)
    rows = [
        (rng.uniform(-1, 1, d).round(3), rng.choice(["<=", ">="]), float(np.round(rng.uniform(-1, 1), 3)))
        for _ in range(k)
    ]
    sense = rng.choice(["max", "min"])
    lp = LinearProgram.from_rows(rng.uniform(-1, 1, d).round(3), rows, [(0.0, 3.0)] * d, sense)
    sol = solve_lp(lp)
    ref = solve_by_vertex_enumeration(lp)
    assert sol.status is ref.status
    if ref.optimal:
        assert sol.objective_value == pytest.approx(ref.objective_value, abs=1e-6)
        assert np.all(row_residuals(lp, sol.values) >= -1e-6)
