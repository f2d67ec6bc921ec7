"""Outcomes, dual snapshots and the F(t) membership checker."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from mechsynth.errors import MechsynthError
from mechsynth.interim import primary_table, table_shapes
from mechsynth.model import Instance, Setting, TypeVector


class OracleError(MechsynthError):
    """Base class for per-scenario optimisation failures."""


class InfeasibleScenario(OracleError):
    """F(t) is empty for a multi-item scenario (malformed polytope rows)."""


class NegativeDual(OracleError):
    """A welfare oracle received a negative multiplier."""


class NonIntegerPayment(OracleError):
    """The seller-utility payment grid is not integral."""


@dataclass(frozen=True, eq=False)
class Outcome:
    """One realisation: allocation plus per-buyer payment.

    ``allocation`` is a unit count per buyer for the multi-unit family and
    the seller-utility setting, an (n, m) fraction matrix for multi-item,
    and a 0/1 procured flag per agent for procurement.
    """

    allocation: np.ndarray
    payments: np.ndarray

    @property
    def revenue(self) -> float:
        return float(self.payments.sum())

    def same_as(self, other: "Outcome") -> bool:
        return np.array_equal(self.allocation, other.allocation) and np.array_equal(self.payments, other.payments)

    def to_dict(self) -> dict:
        return {"allocation": self.allocation.tolist(), "payments": self.payments.tolist()}

    @classmethod
    def zero(cls, inst: Instance) -> "Outcome":
        if inst.setting is Setting.MULTI_ITEM:
            alloc = np.zeros((inst.n, inst.m))
        else:
            alloc = np.zeros(inst.n, dtype=np.int64)
        return cls(alloc, np.zeros(inst.n))


@dataclass(frozen=True, eq=False)
class DualSnapshot:
    """One round's per-scenario objective.

    ``alpha`` has the shape of the setting's primary interim table (X or U),
    ``beta`` the shape of its payment table, ``gamma`` weighs the
    action-side objective row (seller utility or procured value).
    """

    setting: Setting
    alpha: np.ndarray
    beta: np.ndarray
    gamma: float = 0.0

    def __post_init__(self) -> None:
        if self.gamma < 0:
            raise OracleError(f"gamma must be non-negative, got {self.gamma}")

    @classmethod
    def zeros(cls, inst: Instance) -> "DualSnapshot":
        alpha_shape, beta_shape = dual_shapes(inst)
        return cls(inst.setting, np.zeros(alpha_shape), np.zeros(beta_shape), 0.0)

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha.tolist(),
            "beta": self.beta.tolist(),
            "gamma": self.gamma,
        }

    @classmethod
    def from_dict(cls, setting: Setting, data: dict) -> "DualSnapshot":
        return cls(
            setting,
            np.asarray(data["alpha"], dtype=np.float64),
            np.asarray(data["beta"], dtype=np.float64),
            float(data.get("gamma", 0.0)),
        )


def dual_shapes(inst: Instance) -> tuple[tuple[int, ...], tuple[int, ...]]:
    shapes = table_shapes(inst)
    beta = shapes.get("P", (inst.n, inst.T))
    return shapes[primary_table(inst)], beta


# ── Membership in F(t) ───────────────────────────────────────────────────


class ViolationKind(str, Enum):
    SUPPLY = "supply"
    IR = "ir"
    BUDGET = "budget"
    PAYMENT = "payment"
    POLYTOPE = "polytope"


@dataclass(frozen=True)
class Violation:
    kind: ViolationKind
    buyer: Optional[int]
    detail: str


def check_outcome(
    outcome: Outcome,
    tvec: TypeVector,
    inst: Instance,
    *,
    tol: float = 0.0,
    all_pay: bool = False,
) -> list[Violation]:
    """Every F(t) row the outcome breaks.  ``tol`` = 0 means an exact check.

    With ``all_pay`` the payment is collected independent of the allocation,
    so per-outcome IR is not part of F(t) (inequality mode).
    """
    s = inst.setting
    a, p = outcome.allocation, outcome.payments
    out: list[Violation] = []

    def add(kind: ViolationKind, buyer: Optional[int], detail: str) -> None:
        out.append(Violation(kind, buyer, detail))

    if s in (Setting.MULTI_UNIT, Setting.QUITTING_RIGHTS, Setting.SOFT_BUDGET, Setting.SELLER_UTILITY):
        if np.any(a < 0) or int(a.sum()) > inst.m:
            add(ViolationKind.SUPPLY, None, f"allocated {int(a.sum())} of {inst.m} units")
    for i, t in enumerate(tvec):
        q_or_x = a[i]
        pi = float(p[i])
        if s in (Setting.MULTI_UNIT, Setting.QUITTING_RIGHTS):
            if pi < -tol:
                add(ViolationKind.PAYMENT, i, f"negative payment {pi}")
            if pi > inst.budget(i, t) + tol:
                add(ViolationKind.BUDGET, i, f"payment {pi} exceeds budget {inst.budget(i, t)}")
            if pi > inst.value(i, int(q_or_x), t) + tol:
                add(ViolationKind.IR, i, f"payment {pi} exceeds value {inst.value(i, int(q_or_x), t)}")
        elif s is Setting.SOFT_BUDGET:
            if pi < -tol:
                add(ViolationKind.PAYMENT, i, f"negative payment {pi}")
            if pi > inst.budget(i, t) + tol:
                add(ViolationKind.BUDGET, i, f"payment {pi} exceeds budget {inst.budget(i, t)}")
            if inst.value(i, int(q_or_x), t) - inst.soft_cost(i, pi) < -tol:
                add(ViolationKind.IR, i, f"cost of payment {pi} exceeds value")
        elif s is Setting.SELLER_UTILITY:
            if pi != round(pi) or abs(pi) > inst.L_int:
                add(ViolationKind.PAYMENT, i, f"payment {pi} is off the integer grid")
            elif inst.buyer_utility_at(i, int(round(pi)), int(q_or_x), t) < -tol:
                add(ViolationKind.IR, i, f"negative utility at (p={pi}, q={int(q_or_x)})")
        elif s is Setting.MULTI_ITEM:
            if np.any(q_or_x < -tol) or np.any(q_or_x > 1 + tol):
                add(ViolationKind.SUPPLY, i, "allocation fraction outside [0, 1]")
            if pi < -tol:
                add(ViolationKind.PAYMENT, i, f"negative payment {pi}")
            if pi > inst.budget(i, t) + tol:
                add(ViolationKind.BUDGET, i, f"payment {pi} exceeds budget {inst.budget(i, t)}")
            if not all_pay and pi > float(inst.values[i, t] @ q_or_x) + tol:
                add(ViolationKind.IR, i, f"payment {pi} exceeds bundle value")
        else:
            x = int(q_or_x)
            if x not in (0, 1):
                add(ViolationKind.SUPPLY, i, f"procured flag {x}")
            if pi < x * inst.cost(i, t) - tol:
                add(ViolationKind.IR, i, f"payment {pi} below cost {inst.cost(i, t)}")
            if x == 0 and pi > tol:
                add(ViolationKind.PAYMENT, i, "payment to an agent that was not procured")
    if s is Setting.MULTI_ITEM:
        col = a.sum(axis=0)
        if np.any(col > inst.supply + tol):
            add(ViolationKind.SUPPLY, None, "item supply exceeded")
        for k, row in enumerate(inst.polytope_rows):
            lhs = float(np.sum(np.asarray(row.x) * a) + np.dot(row.p, p))
            ok = {"<=": lhs <= row.rhs + tol, ">=": lhs >= row.rhs - tol, "==": abs(lhs - row.rhs) <= tol}[row.rel]
            if not ok:
                add(ViolationKind.POLYTOPE, None, f"polytope row {k} violated")
    if s is Setting.PROCUREMENT and float(p.sum()) > float(inst.procurement_budget or 0.0) + tol:
        add(ViolationKind.BUDGET, None, f"total payment {float(p.sum())} exceeds budget")
    return out
