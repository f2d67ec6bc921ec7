"""Tests for instance documents, priors and validation."""

import math

import numpy as np
import pytest
from pydantic import ValidationError

from mechsynth.errors import CapExceeded
from mechsynth.model import (
    IndependentPrior,
    InstanceDoc,
    InstanceError,
    JointPrior,
    Setting,
    SoftCost,
    ZeroConditional,
    compute_width_params,
    conditional_ratio,
    enumerate_joint_types,
    sample_type_vector,
    validate_instance,
)

from .conftest import build_instance, single_buyer


def _joint_doc(**overrides):
    doc = {
        "name": "joint",
        "setting": "multi_unit",
        "n": 2,
        "m": 1,
        "L": 4,
        "type_spaces": [["a", "b"], ["x", "y"]],
        "prior": {
            "kind": "joint",
            "entries": [
                {"types": ["a", "x"], "prob": 0.2},
                {"types": ["b", "x"], "prob": 0.4},
                {"types": ["a", "y"], "prob": 0.2},
                {"types": ["b", "y"], "prob": 0.2},
            ],
        },
        "valuations": [[[0, 1], [0, 2]], [[0, 1], [0, 3]]],
    }
    doc.update(overrides)
    return doc


# ---------------------------------------------------------------------------
# validate_instance
# ---------------------------------------------------------------------------

def test_single_type_buyer_is_valid():
    inst = single_buyer(type_spaces=[["only"]], prior={"kind": "independent", "pmfs": [[1.0]]}, valuations=[[[0, 1]]])
    assert validate_instance(inst) == []


def test_demo_instances_are_valid(instance_file):
    for name in [
        "single_buyer", "single_buyer_budget", "two_buyers_two_units", "private_budgets", "correlated",
        "quitting_rights", "soft_budget", "seller_utility", "procurement", "multi_item_envy_free",
        "multi_item_inequality",
    ]:
        assert validate_instance(instance_file(name)) == [], name


def test_pmf_not_summing_to_one():
    inst = single_buyer(L=4, prior={"kind": "independent", "pmfs": [[0.5, 0.4]]})
    problems = validate_instance(inst)
    assert len(problems) == 1
    assert "pmf" in problems[0] and "sums to" in problems[0]


def test_marginal_below_one_over_L():
    inst = single_buyer(L=4, prior={"kind": "independent", "pmfs": [[0.125, 0.875]]})
    problems = validate_instance(inst)
    assert len(problems) == 1
    assert "1/L" in problems[0]


def test_value_above_L():
    problems = validate_instance(single_buyer(valuations=[[[0, 1], [0, 3]]]))
    assert any("exceeds L" in p for p in problems)


def test_nonzero_value_of_nothing():
    problems = validate_instance(single_buyer(valuations=[[[0.5, 1], [0, 2]]]))
    assert any("v(0)" in p for p in problems)


def test_budget_outside_range():
    problems = validate_instance(single_buyer(budgets=[3.0]))
    assert any(p.startswith("budgets:") for p in problems)


def test_private_budgets_only_multi_unit(build):
    inst = build(**_joint_doc(
        setting="quitting_rights",
        prior={"kind": "independent", "pmfs": [[0.5, 0.5], [0.5, 0.5]]},
        private_budgets=[[1, 2], [1, 2]],
        correlated=False,
    ))
    assert any("private budgets" in p for p in validate_instance(inst))


def test_inequality_mode_needs_multi_item():
    problems = validate_instance(single_buyer(inequality_mode=True))
    assert any(p.startswith("inequality_mode") for p in problems)


def test_correlated_needs_joint_prior():
    problems = validate_instance(single_buyer(correlated=True))
    assert any("joint prior" in p for p in problems)


def test_soft_cost_slopes_below_one():
    inst = single_buyer(setting="soft_budget", L=4, soft_cost=[{"breakpoints": [1], "slopes": [1, 0.5]}])
    assert any("slope < 1" in p for p in validate_instance(inst))


def test_soft_cost_required():
    inst = single_buyer(setting="soft_budget")
    assert validate_instance(inst) == ["soft_cost: required for setting soft_budget"]


def test_seller_utility_monotone_and_anchored():
    inst = single_buyer(setting="seller_utility", seller_utility={-2: 0, -1: 1, 0: 0.5, 1: 0.2, 2: 2})
    problems = validate_instance(inst)
    assert any("U(0)" in p for p in problems)
    assert any("monotone" in p for p in problems)


def test_seller_utility_gaps_and_interpolation():
    gappy = {-2: -2, 0: 0, 2: 4}
    problems = validate_instance(single_buyer(setting="seller_utility", seller_utility=gappy))
    assert any("no utility" in p for p in problems)
    filled = single_buyer(setting="seller_utility", seller_utility=gappy, seller_utility_interpolate=True)
    assert validate_instance(filled) == []
    assert filled.seller_utility_at(-1) == pytest.approx(-1.0)
    assert filled.seller_utility_at(1) == pytest.approx(2.0)


def test_seller_utility_defaults_to_identity():
    inst = single_buyer(setting="seller_utility")
    assert inst.seller_utility_at(2) == 2.0
    with pytest.raises(InstanceError):
        inst.seller_utility_at(3)


def test_procurement_fields():
    inst = single_buyer(setting="procurement", valuations=None, procurement_costs=[[1, 2.5]],
                        procurement_values=[1.0])
    problems = validate_instance(inst)
    assert any("integers in [0, L]" in p for p in problems)
    assert any("procurement_budget" in p for p in problems)


# ---------------------------------------------------------------------------
# Document parsing
# ---------------------------------------------------------------------------

def test_shape_errors_raise():
    with pytest.raises(InstanceError):
        single_buyer(valuations=[[[0, 1]]])
    with pytest.raises(InstanceError):
        single_buyer(prior={"kind": "independent", "pmfs": [[1.0]]})
    with pytest.raises(InstanceError):
        single_buyer(type_spaces=[["lo", "hi"], ["x"]])


def test_unknown_setting_rejected_by_schema():
    with pytest.raises(ValidationError):
        InstanceDoc.model_validate({**_joint_doc(), "setting": "lottery"})


def test_joint_entry_with_unknown_label(build):
    doc = _joint_doc()
    doc["prior"]["entries"][0]["types"] = ["a", "z"]
    with pytest.raises(InstanceError):
        build(**doc)


def test_correlated_defaults_for_joint_multi_unit(build):
    assert build(**_joint_doc()).correlated
    assert not single_buyer().correlated


def test_parse_types():
    inst = single_buyer()
    assert inst.parse_types(["hi"]) == (1,)
    with pytest.raises(InstanceError):
        inst.parse_types(["mid"])
    with pytest.raises(InstanceError):
        inst.parse_types(["lo", "hi"])


def test_fingerprint_tracks_content():
    assert single_buyer().fingerprint == single_buyer().fingerprint
    assert single_buyer().fingerprint != single_buyer(budgets=[1.0]).fingerprint


def test_budgets_default_to_L():
    inst = single_buyer(budgets=[None])
    assert inst.budget(0, 1) == 2.0
    assert inst.payment_cap(0, 0) == 2.0
    assert single_buyer(budgets=[0.5]).payment_cap(0, 1) == 0.5


# ---------------------------------------------------------------------------
# Priors
# ---------------------------------------------------------------------------

def test_enumerate_independent_in_order():
    prior = IndependentPrior([np.array([0.5, 0.5]), np.array([0.25, 0.0, 0.75])])
    entries = list(enumerate_joint_types(prior))
    assert [t for t, _ in entries] == [(0, 0), (0, 2), (1, 0), (1, 2)]
    assert sum(p for _, p in entries) == pytest.approx(1.0)


def test_enumerate_cap():
    prior = IndependentPrior([np.full(10, 0.1)] * 10)
    with pytest.raises(CapExceeded):
        enumerate_joint_types(prior)


def test_joint_conditional_ratio(build):
    inst = build(**_joint_doc())
    assert conditional_ratio(inst.prior, 0, 0, 1, (0,)) == pytest.approx(0.5)
    assert inst.prior.conditional_ratio(1, 0, 1, (1,)) == pytest.approx(2.0)


def test_zero_conditional():
    prior = JointPrior((2, 2), {(0, 0): 0.5, (1, 1): 0.5})
    with pytest.raises(ZeroConditional):
        prior.conditional_ratio(0, 0, 1, (0,))


def test_independent_ratio_ignores_others():
    prior = IndependentPrior([np.array([0.25, 0.75])])
    assert prior.conditional_ratio(0, 1, 0, ()) == pytest.approx(3.0)


def test_conditional_of_others(build):
    inst = build(**_joint_doc())
    cond = dict(inst.prior.conditional_of_others(0, 1))
    assert cond == pytest.approx({(0,): 2 / 3, (1,): 1 / 3})


def test_joint_marginals(build):
    inst = build(**_joint_doc())
    np.testing.assert_allclose(inst.marginal(0), [0.4, 0.6])
    np.testing.assert_allclose(inst.marginal(1), [0.6, 0.4])


def test_sampling_frequencies():
    prior = IndependentPrior([np.array([0.25, 0.75])])
    draws = prior.sample(np.random.default_rng(7), 20_000)
    assert abs(float(np.mean(draws[:, 0] == 1)) - 0.75) < 0.02


def test_sample_type_vector_stays_on_support():
    prior = JointPrior((2, 2), {(0, 0): 0.5, (1, 1): 0.5})
    rng = np.random.default_rng(3)
    draws = {sample_type_vector(prior, rng) for _ in range(200)}
    assert draws == {(0, 0), (1, 1)}


# ---------------------------------------------------------------------------
# Width parameters
# ---------------------------------------------------------------------------

def test_z_max_of_joint_prior(build):
    params = compute_width_params(build(**_joint_doc()))
    assert params.z_max == pytest.approx(2.0)
    assert params.full_conditional_support


def test_z_max_of_independent_prior():
    params = compute_width_params(single_buyer(prior={"kind": "independent", "pmfs": [[0.25, 0.75]]}, L=4))
    assert params.z_max == pytest.approx(3.0)
    assert params.l_effective == 4.0


def test_missing_conditional_support(build):
    doc = _joint_doc()
    doc["prior"]["entries"] = doc["prior"]["entries"][:3]
    doc["prior"]["entries"][1]["prob"] = 0.6
    assert not compute_width_params(build(**doc)).full_conditional_support


# ---------------------------------------------------------------------------
# Soft costs
# ---------------------------------------------------------------------------

def test_soft_cost_pieces():
    c = SoftCost(np.array([2.0]), np.array([1.0, 2.0]))
    assert c(0) == 0.0
    assert c(1) == pytest.approx(1.0)
    assert c(3) == pytest.approx(4.0)


def test_soft_cost_inverse():
    c = SoftCost(np.array([2.0]), np.array([1.0, 2.0]))
    assert c.inverse(4.0) == pytest.approx(3.0)
    assert c.inverse(1.0) == pytest.approx(1.0)
    assert c.inverse(0.0) == 0.0
    assert c.inverse(-0.1) == -math.inf
    for y in np.linspace(0, 5, 37):
        assert c(c.inverse(float(y))) <= y


def test_identity_cost_without_soft_table():
    inst = single_buyer()
    assert inst.soft_cost(0, 1.5) == 1.5
    assert inst.soft_cost_inverse(0, -1) == -math.inf


def test_setting_families():
    assert Setting.SOFT_BUDGET.is_unit_family
    assert not Setting.PROCUREMENT.is_unit_family
