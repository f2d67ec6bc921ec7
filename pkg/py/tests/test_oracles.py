"""Tests for the per-scenario oracles and the holistic subproblem."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mechsynth.bruteforce import brute_force_oracle, dual_objective, payment_points
from mechsynth.model import Setting, enumerate_joint_types, load_instance
from mechsynth.oracles import (
    DualSnapshot,
    ExactWelfareOracle,
    HolisticInfeasible,
    NegativeDual,
    OracleError,
    Outcome,
    ViolationKind,
    allocate_units,
    check_outcome,
    dual_shapes,
    knapsack,
    oracle_multi_item_lp,
    oracle_multi_unit,
    oracle_procurement,
    oracle_quitting_rights,
    oracle_seller_utility,
    oracle_soft_budget,
    oracle_welfare_downward_closed,
    solve_lp_exp,
    solve_oracle,
)

from mechsynth.oracles.multi_unit import effective_weights, z_weights

from .conftest import DATA, RANDOM_KINDS, build_instance, random_instance, single_buyer


def _duals(inst, alpha=None, beta=None, gamma=0.0):
    a_shape, b_shape = dual_shapes(inst)
    a = np.zeros(a_shape) if alpha is None else alpha
    b = np.zeros(b_shape) if beta is None else beta
    return DualSnapshot(inst.setting, a, b, gamma)


def _one_type(**overrides):
    doc = {
        "type_spaces": [["only"]],
        "prior": {"kind": "independent", "pmfs": [[1.0]]},
    }
    doc.update(overrides)
    return single_buyer(**doc)


# ---------------------------------------------------------------------------
# Identical units
# ---------------------------------------------------------------------------

def test_zero_duals_allocate_nothing(two_buyers):
    duals = _duals(two_buyers, beta=np.full((2, 2), -1.0))
    outcome, value = oracle_multi_unit(duals, (0, 1), two_buyers)
    assert outcome.allocation.tolist() == [0, 0]
    assert outcome.payments.tolist() == [0.0, 0.0]
    assert value == 0.0


def test_units_split_between_two_buyers(two_buyers):
    alpha = np.zeros((2, 2, 3))
    alpha[0, 0] = [0.0, 0.5, 0.7]
    alpha[1, 0] = [0.0, 0.6, 0.9]
    duals = _duals(two_buyers, alpha=alpha, beta=np.full((2, 2), -1.0))
    outcome, value = oracle_multi_unit(duals, (0, 0), two_buyers)
    assert outcome.allocation.tolist() == [1, 1]
    assert value == pytest.approx(1.1)


def test_payment_capped_by_budget():
    inst = single_buyer(L=4, valuations=[[[0, 1], [0, 3]]], budgets=[2])
    beta = np.zeros((1, 2))
    beta[0, 1] = 1.0
    outcome, value = oracle_multi_unit(_duals(inst, beta=beta), (1,), inst)
    assert outcome.allocation.tolist() == [1]
    assert outcome.payments.tolist() == [2.0]
    assert value == pytest.approx(2.0)


def test_allocate_units_prefers_fewer_units_on_ties():
    q, value = allocate_units(np.array([[0.0, 1.0, 1.0], [0.0, 0.0, 0.0]]), 2)
    assert q.tolist() == [1, 0]
    assert value == 1.0


def test_quitting_rights_candidate_payment():
    inst = single_buyer(setting="quitting_rights", L=5, valuations=[[[0, 1], [0, 3]]], budgets=[5])
    alpha = np.zeros((1, 2, 2))
    alpha[0, 1, 1] = 1.0
    beta = np.zeros((1, 2))
    beta[0, 1] = 2.0
    outcome, value = oracle_quitting_rights(_duals(inst, alpha, beta), (1,), inst)
    assert outcome.allocation.tolist() == [1]
    assert outcome.payments.tolist() == [3.0]
    assert value == pytest.approx(6.0)


def test_quitting_rights_negative_beta_pays_nothing(quitting):
    alpha = np.ones((2, 2, 2))
    beta = np.full((2, 2), -0.5)
    outcome, _ = oracle_quitting_rights(_duals(quitting, alpha, beta), (1, 0), quitting)
    assert outcome.payments.tolist() == [0.0, 0.0]


def _soft_instance():
    return single_buyer(
        setting="soft_budget",
        L=4,
        valuations=[[[0, 2], [0, 4]]],
        soft_cost=[{"breakpoints": [2], "slopes": [1, 2.5]}],
    )


def test_soft_budget_without_payment_weight():
    inst = _soft_instance()
    alpha = np.zeros((1, 2, 2))
    alpha[0, 1, 1] = 1.0
    outcome, value = oracle_soft_budget(_duals(inst, alpha), (1,), inst)
    assert outcome.payments.tolist() == [0.0]
    assert value == pytest.approx(4.0)


def test_soft_budget_tie_keeps_lowest_payment():
    inst = _soft_instance()
    alpha = np.zeros((1, 2, 2))
    alpha[0, 1, 1] = 1.0
    beta = np.zeros((1, 2))
    beta[0, 1] = 1.0
    outcome, value = oracle_soft_budget(_duals(inst, alpha, beta), (1,), inst)
    assert value == pytest.approx(4.0)
    assert outcome.payments.tolist() == [0.0]


def test_soft_budget_pure_revenue_hits_cost_cap():
    inst = _soft_instance()
    beta = np.zeros((1, 2))
    beta[0, 1] = 1.0
    outcome, value = oracle_soft_budget(_duals(inst, beta=beta), (1,), inst)
    assert outcome.allocation.tolist() == [1]
    assert outcome.payments[0] == pytest.approx(2.8)
    assert value == pytest.approx(2.8)
    assert inst.soft_cost(0, outcome.payments[0]) <= 4.0


def test_soft_budget_linear_cost_matches_quitting_shape():
    inst = single_buyer(setting="soft_budget", soft_cost=[{"breakpoints": [], "slopes": [1]}])
    beta = np.zeros((1, 2))
    beta[0, 0] = 1.0
    outcome, value = oracle_soft_budget(_duals(inst, beta=beta), (0,), inst)
    assert outcome.payments.tolist() == [1.0]
    assert value == pytest.approx(1.0)


# ---------------------------------------------------------------------------
# Seller utility
# ---------------------------------------------------------------------------

def _sqrt_seller():
    table = {-2: -math.sqrt(2), -1: -1.0, 0: 0.0, 1: 1.0, 2: math.sqrt(2)}
    return _one_type(setting="seller_utility", valuations=[[[0, 2]]], seller_utility=table)


def test_seller_zero_duals_pick_null_outcome(seller):
    outcome, value = oracle_seller_utility(_duals(seller), (1,), seller)
    assert outcome.allocation.tolist() == [0]
    assert outcome.payments.tolist() == [0.0]
    assert value == 0.0


def test_seller_concave_utility():
    inst = _sqrt_seller()
    outcome, value = oracle_seller_utility(_duals(inst, gamma=1.0), (0,), inst)
    assert outcome.allocation.tolist() == [1]
    assert outcome.payments.tolist() == [2.0]
    assert value == pytest.approx(math.sqrt(2))


def test_seller_negative_transfer():
    inst = _sqrt_seller()
    alpha = np.zeros(dual_shapes(inst)[0])
    alpha[0, 0, -1 + inst.L_int, 0] = 5.0
    outcome, value = oracle_seller_utility(_duals(inst, alpha, gamma=1.0), (0,), inst)
    assert outcome.allocation.tolist() == [0]
    assert outcome.payments.tolist() == [-1.0]
    assert value == pytest.approx(4.0)


# ---------------------------------------------------------------------------
# Procurement
# ---------------------------------------------------------------------------

def _two_agents(**overrides):
    doc = {
        "name": "two_agents",
        "setting": "procurement",
        "n": 2,
        "m": 0,
        "L": 3,
        "type_spaces": [["only"], ["only"]],
        "prior": {"kind": "independent", "pmfs": [[1.0], [1.0]]},
        "procurement_costs": [[1], [2]],
        "procurement_values": [3, 1],
        "procurement_budget": 3,
    }
    doc.update(overrides)
    return build_instance(**doc)


def test_procure_both_at_cost():
    inst = _two_agents()
    outcome, value = oracle_procurement(_duals(inst, gamma=1.0), (0, 0), inst)
    assert outcome.allocation.tolist() == [1, 1]
    assert outcome.payments.tolist() == [1.0, 2.0]
    assert value == pytest.approx(4.0)


def test_zero_budget_procures_nothing():
    inst = _two_agents(procurement_budget=0)
    outcome, value = oracle_procurement(_duals(inst, gamma=1.0), (0, 0), inst)
    assert outcome.allocation.tolist() == [0, 0]
    assert value == 0.0


def test_leftover_budget_goes_to_one_winner():
    inst = _two_agents()
    beta = np.array([[1.0], [0.0]])
    outcome, value = oracle_procurement(_duals(inst, beta=beta, gamma=1.0), (0, 0), inst)
    assert outcome.allocation.tolist() == [1, 0]
    assert outcome.payments.tolist() == [3.0, 0.0]
    assert value == pytest.approx(6.0)
    assert check_outcome(outcome, (0, 0), inst) == []


def test_knapsack_core():
    value, chosen = knapsack([2, 3, 4], [3, 4, 5], 5)
    assert value == 7
    assert chosen == [0, 1]


def test_knapsack_negative_capacity():
    assert knapsack([1], [1.0], -1) == (-math.inf, [])


# ---------------------------------------------------------------------------
# Multi-item
# ---------------------------------------------------------------------------

def _one_item(**overrides):
    return _one_type(setting="multi_item", L=4, valuations=[[[4]]], budgets=[3], **overrides)


def test_divisible_item_pays_budget():
    inst = _one_item()
    beta = np.ones((1, 1))
    outcome, value = oracle_multi_item_lp(_duals(inst, beta=beta), (0,), inst)
    assert value == pytest.approx(3.0)
    assert outcome.payments[0] == pytest.approx(3.0)
    assert outcome.allocation[0, 0] >= 0.75 - 1e-9
    assert check_outcome(outcome, (0,), inst) == []


def test_zero_duals_zero_value(multi_item):
    outcome, value = oracle_multi_item_lp(_duals(multi_item, beta=-np.ones((2, 2))), (0, 1), multi_item)
    assert value == pytest.approx(0.0)
    np.testing.assert_allclose(outcome.payments, 0.0, atol=1e-9)


def test_envy_free_split():
    inst = build_instance(
        name="twins",
        setting="multi_item",
        n=2,
        m=1,
        L=1,
        type_spaces=[["only"], ["only"]],
        prior={"kind": "independent", "pmfs": [[1.0], [1.0]]},
        valuations=[[[1]], [[1]]],
        envy_free=True,
    )
    alpha = np.ones((2, 1, 1))
    outcome, value = oracle_multi_item_lp(_duals(inst, alpha), (0, 0), inst)
    assert value == pytest.approx(1.0)
    assert outcome.allocation.sum() == pytest.approx(1.0)
    assert check_outcome(outcome, (0, 0), inst, tol=1e-9) == []


def test_welfare_assignment(inequality):
    alpha = np.zeros((2, 2, 2))
    alpha[0, 0] = [0.3, 0.5]
    alpha[1, 0] = [0.8, 0.1]
    outcome, value = oracle_welfare_downward_closed(_duals(inequality, alpha), (0, 0), inequality)
    assert outcome.allocation.tolist() == [[0.0, 1.0], [1.0, 0.0]]
    assert value == pytest.approx(1.3)


def test_welfare_zero_weights(inequality):
    outcome, value = oracle_welfare_downward_closed(_duals(inequality), (1, 1), inequality)
    assert outcome.allocation.sum() == 0.0
    assert value == 0.0


def test_welfare_single_buyer_takes_positive_items():
    inst = _one_type(setting="multi_item", m=3, valuations=[[[1, 1, 1]]], inequality_mode=True)
    alpha = np.array([[[0.2, 0.0, 0.4]]])
    outcome, value = oracle_welfare_downward_closed(_duals(inst, alpha), (0,), inst)
    assert outcome.allocation.tolist() == [[1.0, 0.0, 1.0]]
    assert value == pytest.approx(0.6)


def test_welfare_rejects_negative_weights(inequality):
    alpha = -np.ones((2, 2, 2))
    with pytest.raises(NegativeDual):
        ExactWelfareOracle()(_duals(inequality, alpha), (0, 0), inequality)


# ---------------------------------------------------------------------------
# Dispatch and membership
# ---------------------------------------------------------------------------

def test_dispatch_rejects_foreign_duals(single, quitting):
    with pytest.raises(OracleError):
        solve_oracle(_duals(quitting), (0,), single)


def test_negative_gamma_rejected(seller):
    with pytest.raises(OracleError):
        _duals(seller, gamma=-1.0)


def test_check_outcome_flags(single_budget, procurement):
    over = Outcome(np.array([1]), np.array([1.0]))
    kinds = {v.kind for v in check_outcome(over, (1,), single_budget)}
    assert kinds == {ViolationKind.BUDGET}
    ghost = Outcome(np.array([0, 1]), np.array([1.0, 1.0]))
    kinds = {v.kind for v in check_outcome(ghost, (0, 0), procurement)}
    assert ViolationKind.PAYMENT in kinds
    assert ViolationKind.IR not in kinds


def test_check_outcome_ir_and_supply(single, two_buyers):
    greedy = Outcome(np.array([2, 1]), np.zeros(2))
    assert [v.kind for v in check_outcome(greedy, (0, 0), two_buyers)] == [ViolationKind.SUPPLY]
    steep = Outcome(np.array([1]), np.array([1.5]))
    assert [v.kind for v in check_outcome(steep, (0,), single)] == [ViolationKind.IR]


# ---------------------------------------------------------------------------
# Holistic LP
# ---------------------------------------------------------------------------

def test_holistic_reaches_attainable_target(single):
    holistic, value = solve_lp_exp(_duals(single), single, 1.0)
    assert value == pytest.approx(0.0)
    revenue = 0.5 * holistic["P"][0, 0] + 0.5 * holistic["P"][0, 1]
    assert revenue >= 1.0 - 1e-7


def test_holistic_rejects_unreachable_target(single):
    with pytest.raises(HolisticInfeasible) as info:
        solve_lp_exp(_duals(single), single, 2.5)
    assert info.value.R == 2.5


def test_holistic_minimises_weighted_tables(single):
    beta = np.ones((1, 2))
    holistic, value = solve_lp_exp(_duals(single, beta=beta), single, 1.0)
    assert value == pytest.approx(1.0)


# ---------------------------------------------------------------------------
# Agreement with plain enumeration
# ---------------------------------------------------------------------------

_ENUMERABLE = [
    ("single_buyer", None),
    ("single_buyer_budget", None),
    ("two_buyers_two_units", None),
    ("private_budgets", None),
    ("quitting_rights", None),
    ("soft_budget", 0.25),
    ("seller_utility", None),
    ("procurement", None),
    ("multi_item_inequality", None),
    ("correlated", None),
]


@pytest.mark.parametrize("name,grid_step", _ENUMERABLE)
@settings(max_examples=25, deadline=None)
@given(seed=st.integers(min_value=0, max_value=2**32 - 1))
def test_oracle_matches_enumeration(name, grid_step, seed):
    inst = load_instance(DATA / f"{name}.json")
    rng = np.random.default_rng(seed)
    a_shape, b_shape = dual_shapes(inst)
    low = 0.0 if inst.inequality_mode else -1.0
    duals = DualSnapshot(
        inst.setting,
        rng.uniform(low, 1.0, a_shape).round(3),
        rng.uniform(-1.0, 1.0, b_shape).round(3),
        float(rng.uniform(0.0, 1.0)),
    )
    for tvec, _ in enumerate_joint_types(inst.prior):
        outcome, value = solve_oracle(duals, tvec, inst)
        reference = brute_force_oracle(inst.setting, duals, tvec, inst, grid_step=grid_step)
        assert value == pytest.approx(reference, abs=1e-6)
        assert dual_objective(inst, duals, tvec, outcome) == pytest.approx(value, abs=1e-9)
        assert check_outcome(outcome, tvec, inst, all_pay=inst.inequality_mode) == []


def test_divisible_oracle_matches_vertex_enumeration(multi_item):
    rng = np.random.default_rng(11)
    duals = _duals(multi_item, rng.uniform(-1, 1, (2, 2, 2)), rng.uniform(-1, 1, (2, 2)))
    for tvec, _ in enumerate_joint_types(multi_item.prior):
        outcome, value = oracle_multi_item_lp(duals, tvec, multi_item)
        reference = brute_force_oracle(Setting.MULTI_ITEM, duals, tvec, multi_item)
        assert value == pytest.approx(reference, abs=1e-6)
        assert value == pytest.approx(dual_objective(multi_item, duals, tvec, outcome), abs=1e-9)


def test_divisible_value_is_measured_after_repair(multi_item, monkeypatch):
    import mechsynth.oracles.multi_item as multi_item_module

    real = multi_item_module.solve_lp

    def overshooting(lp):
        sol = real(lp)
        sol.values[:4] += 1e-7
        sol.objective_value += 1.0
        return sol

    monkeypatch.setattr(multi_item_module, "solve_lp", overshooting)
    rng = np.random.default_rng(3)
    duals = _duals(multi_item, rng.uniform(0, 1, (2, 2, 2)), rng.uniform(-1, 1, (2, 2)))
    outcome, value = oracle_multi_item_lp(duals, (1, 1), multi_item)
    assert np.all(outcome.allocation <= 1.0)
    assert value == pytest.approx(dual_objective(multi_item, duals, (1, 1), outcome), abs=1e-12)


# ---------------------------------------------------------------------------
# Correlated weights
# ---------------------------------------------------------------------------

def test_z_weights_are_conditional_ratios(correlated):
    np.testing.assert_allclose(z_weights(correlated, 0, (0, 0)), [1.0, 0.2 / 0.3])
    np.testing.assert_allclose(z_weights(correlated, 0, (1, 0)), [0.3 / 0.2, 1.0])
    np.testing.assert_allclose(z_weights(correlated, 1, (0, 1)), [0.3 / 0.2, 1.0])
    np.testing.assert_allclose(z_weights(correlated, 1, (1, 1)), [0.2 / 0.3, 1.0])


def test_z_weights_vanish_without_joint_prior(two_buyers):
    assert not z_weights(two_buyers, 0, (1, 0)).any()


def test_effective_weights_mix_true_types(correlated):
    a_shape, b_shape = dual_shapes(correlated)
    alpha, beta = np.zeros(a_shape), np.zeros(b_shape)
    alpha[0, 0, 0] = [0.0, 1.0]
    alpha[0, 1, 0] = [0.0, 3.0]
    beta[0, 0, 0], beta[0, 1, 0] = 1.0, -3.0
    eff_alpha, eff_beta = effective_weights(_duals(correlated, alpha, beta), correlated, 0, (0, 0))
    np.testing.assert_allclose(eff_alpha, [0.0, 3.0])
    assert eff_beta == pytest.approx(-1.0)


def test_effective_weights_independent_prior(two_buyers):
    rng = np.random.default_rng(2)
    duals = _duals(two_buyers, rng.uniform(-1, 1, (2, 2, 3)), rng.uniform(-1, 1, (2, 2)))
    alpha, beta = effective_weights(duals, two_buyers, 1, (0, 1))
    np.testing.assert_array_equal(alpha, duals.alpha[1, 1])
    assert beta == duals.beta[1, 1]


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(min_value=0, max_value=2**32 - 1))
def test_effective_weights_match_z_mixture(seed):
    correlated = load_instance(DATA / "correlated.json")
    rng = np.random.default_rng(seed)
    a_shape, b_shape = dual_shapes(correlated)
    duals = _duals(correlated, rng.uniform(-1, 1, a_shape), rng.uniform(-1, 1, b_shape))
    for tvec, _ in enumerate_joint_types(correlated.prior):
        for i in range(2):
            z = z_weights(correlated, i, tvec)
            alpha, beta = effective_weights(duals, correlated, i, tvec)
            expected = sum(z[t] * duals.alpha[i, t, tvec[i]] for t in range(2))
            np.testing.assert_allclose(alpha, expected, atol=1e-12)
            assert beta == pytest.approx(sum(z[t] * duals.beta[i, t, tvec[i]] for t in range(2)), abs=1e-12)


# ---------------------------------------------------------------------------
# Random scenarios against the reference oracle
# ---------------------------------------------------------------------------

def test_payment_points_cover_values_and_budgets(quitting):
    points = payment_points(quitting, 0, step=0.75)
    assert {0.0, 0.75, 1.0, 1.5, 2.0} == set(points)
    assert all(0.0 <= p <= quitting.L for p in points)


def test_payment_points_reach_soft_cost_inverse(soft):
    # c(p) = p up to 2, slope 2 after: c(p) = 4 at p = 3
    points = payment_points(soft, 0, step=0.4)
    assert any(abs(p - 3.0) < 1e-9 for p in points)


def _random_duals(inst, rng):
    a_shape, b_shape = dual_shapes(inst)
    low = 0.0 if inst.inequality_mode else -1.0
    return DualSnapshot(
        inst.setting,
        rng.uniform(low, 1.0, a_shape),
        rng.uniform(-1.0, 1.0, b_shape),
        float(rng.uniform(0.0, 1.0)),
    )


@pytest.mark.slow
@pytest.mark.parametrize("kind", RANDOM_KINDS)
@settings(max_examples=1000, deadline=None)
@given(seed=st.integers(min_value=0, max_value=2**32 - 1))
def test_random_scenarios_match_reference(kind, seed):
    rng = np.random.default_rng(seed)
    inst = random_instance(kind, rng)
    duals = _random_duals(inst, rng)
    vectors, _ = inst.prior.support_arrays()
    tvec = tuple(int(t) for t in vectors[rng.integers(len(vectors))])
    outcome, value = solve_oracle(duals, tvec, inst)
    assert check_outcome(outcome, tvec, inst, all_pay=inst.inequality_mode) == []
    assert dual_objective(inst, duals, tvec, outcome) == pytest.approx(value, abs=1e-9)
    assert value == pytest.approx(brute_force_oracle(inst.setting, duals, tvec, inst), abs=1e-6)
