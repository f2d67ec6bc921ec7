"""Per-scenario oracles A(α, β[, γ]) and the holistic LP_exp subproblem."""

from __future__ import annotations

from typing import Optional

from mechsynth.model import Instance, Setting, TypeVector
from mechsynth.oracles.holistic import HolisticInfeasible, HolisticProgram, marginal_weights, solve_lp_exp
from mechsynth.oracles.multi_item import (
    ExactWelfareOracle,
    WelfareOracle,
    oracle_multi_item_lp,
    oracle_welfare_downward_closed,
)
from mechsynth.oracles.multi_unit import (
    UNIT_ORACLES,
    allocate_units,
    oracle_multi_unit,
    oracle_quitting_rights,
    oracle_soft_budget,
)
from mechsynth.oracles.outcome import (
    DualSnapshot,
    InfeasibleScenario,
    NegativeDual,
    NonIntegerPayment,
    OracleError,
    Outcome,
    Violation,
    ViolationKind,
    check_outcome,
    dual_shapes,
)
from mechsynth.oracles.procurement import knapsack, oracle_procurement
from mechsynth.oracles.seller_utility import oracle_seller_utility

__all__ = [
    "DualSnapshot",
    "ExactWelfareOracle",
    "HolisticInfeasible",
    "HolisticProgram",
    "InfeasibleScenario",
    "NegativeDual",
    "NonIntegerPayment",
    "OracleError",
    "Outcome",
    "Violation",
    "ViolationKind",
    "WelfareOracle",
    "allocate_units",
    "check_outcome",
    "dual_shapes",
    "knapsack",
    "marginal_weights",
    "oracle_multi_item_lp",
    "oracle_multi_unit",
    "oracle_procurement",
    "oracle_quitting_rights",
    "oracle_seller_utility",
    "oracle_soft_budget",
    "oracle_welfare_downward_closed",
    "solve_lp_exp",
    "solve_oracle",
]


def solve_oracle(
    duals: DualSnapshot,
    tvec: TypeVector,
    inst: Instance,
    welfare_oracle: Optional[WelfareOracle] = None,
) -> tuple[Outcome, float]:
    """Dispatch to the oracle of the instance's setting."""
    if duals.setting is not inst.setting:
        raise OracleError(f"duals for {duals.setting.value} passed to a {inst.setting.value} instance")
    if inst.inequality_mode:
        return (welfare_oracle or ExactWelfareOracle())(duals, tvec, inst)
    if inst.setting is Setting.MULTI_ITEM:
        return oracle_multi_item_lp(duals, tvec, inst)
    if inst.setting is Setting.SELLER_UTILITY:
        return oracle_seller_utility(duals, tvec, inst)
    if inst.setting is Setting.PROCUREMENT:
        return oracle_procurement(duals, tvec, inst)
    return UNIT_ORACLES[inst.setting](duals, tvec, inst)
