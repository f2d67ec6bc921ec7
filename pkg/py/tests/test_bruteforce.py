"""Tests for the ground-truth optimal-mechanism LP."""

import pytest

from mechsynth.bruteforce import BruteForceError, brute_force_opt, scenario_actions
from mechsynth.errors import CapExceeded
from mechsynth.oracles import check_outcome
from mechsynth.verify import check_bic


@pytest.mark.parametrize(
    "overrides, expected",
    [
        ({}, 1.0),
        ({"budgets": [0.5]}, 0.5),
        ({"valuations": [[[0, 0], [0, 0]]]}, 0.0),
        ({"prior": {"kind": "independent", "pmfs": [[0.75, 0.25]]}, "L": 4}, 1.0),
    ],
)
def test_single_buyer_opt(make_single, overrides, expected):
    assert brute_force_opt(make_single(**overrides)).opt == pytest.approx(expected, abs=1e-7)


@pytest.mark.parametrize(
    "name",
    ["single_buyer", "two_buyers_two_units", "private_budgets", "quitting_rights", "seller_utility",
     "procurement", "multi_item_envy_free", "multi_item_inequality", "correlated"],
)
def test_optimum_is_bic_and_feasible(instance_file, name):
    inst = instance_file(name)
    result = brute_force_opt(inst)
    assert check_bic(result.tables, inst) <= 1e-7
    for tvec, picks in result.distribution.items():
        assert sum(prob for prob, _ in picks) == pytest.approx(1.0, abs=1e-7)
        if not inst.inequality_mode:
            for _, outcome in picks:
                assert check_outcome(outcome, tvec, inst, tol=1e-7) == []


def test_budget_never_raises_opt(make_single):
    assert brute_force_opt(make_single(budgets=[1.5])).opt <= brute_force_opt(make_single()).opt + 1e-9


def test_result_document(single):
    doc = brute_force_opt(single).to_dict(single)
    assert doc["opt"] == pytest.approx(1.0)
    assert {tuple(s["types"]) for s in doc["scenarios"]} == {("lo",), ("hi",)}
    assert all("allocation" in a and "prob" in a for s in doc["scenarios"] for a in s["actions"])


def test_soft_grid_only_adds_candidates(soft):
    coarse = brute_force_opt(soft).opt
    fine = brute_force_opt(soft, grid_step=0.5)
    assert fine.grid_step == 0.5
    assert fine.opt >= coarse - 1e-9


# ---------------------------------------------------------------------------
# Action grids
# ---------------------------------------------------------------------------

def test_single_buyer_actions(single):
    actions = scenario_actions(single, (1,))
    assert sorted((int(o.allocation[0]), float(o.payments[0])) for o in actions) == [(0, 0.0), (1, 0.0), (1, 2.0)]


def test_assignment_actions(inequality):
    assert len(scenario_actions(inequality, (0, 0))) == 9


def test_divisible_items_have_no_grid(multi_item):
    with pytest.raises(BruteForceError):
        scenario_actions(multi_item, (0, 0))


def test_action_cap(two_buyers):
    with pytest.raises(CapExceeded):
        scenario_actions(two_buyers, (1, 1), cap=3)
