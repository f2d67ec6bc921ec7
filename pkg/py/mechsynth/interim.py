"""
Interim (holistic) tables and the linear rows defined over them.

Every setting describes a mechanism's interim behaviour with a small set of
named tables.  Axis 0 is always the buyer and axis 1 the type the
expectation is conditioned on (the reported type, or the true type in
correlated mode):

    multi_unit        X[i, t, q]            P[i, t]
    multi_unit corr.  X[i, t, t', q]        P[i, t, t']     (true t, report t')
    quitting/soft     U[i, t, t']           P[i, t]         (report t, true t')
    seller_utility    X[i, t, p + L, q]
    multi_item        X[i, t, j]            P[i, t]
    procurement       X[i, t]               P[i, t]

The same layout indexes the duals of a round, the variables of the holistic
LP and the tables produced by verification, so BIC rows are written once
here and shared by all three.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable, Optional

import numpy as np

from mechsynth.model import Instance, Setting

if TYPE_CHECKING:
    from mechsynth.oracles.outcome import Outcome


Term = tuple[str, tuple[int, ...], float]


@dataclass(frozen=True)
class InterimRow:
    """Σ coef · table[index] >= rhs."""

    terms: tuple[Term, ...]
    rhs: float
    label: str
    equality: bool = False

    def slack(self, tables: dict[str, np.ndarray]) -> float:
        lhs = sum(coef * float(tables[name][idx]) for name, idx, coef in self.terms)
        return lhs - self.rhs


def table_shapes(inst: Instance) -> dict[str, tuple[int, ...]]:
    n, T, m = inst.n, inst.T, inst.m
    s = inst.setting
    if s is Setting.MULTI_UNIT:
        if inst.correlated:
            return {"X": (n, T, T, m + 1), "P": (n, T, T)}
        return {"X": (n, T, m + 1), "P": (n, T)}
    if s in (Setting.QUITTING_RIGHTS, Setting.SOFT_BUDGET):
        return {"U": (n, T, T), "P": (n, T)}
    if s is Setting.SELLER_UTILITY:
        return {"X": (n, T, 2 * inst.L_int + 1, m + 1)}
    if s is Setting.MULTI_ITEM:
        return {"X": (n, T, m), "P": (n, T)}
    return {"X": (n, T), "P": (n, T)}


def primary_table(inst: Instance) -> str:
    return "U" if inst.setting in (Setting.QUITTING_RIGHTS, Setting.SOFT_BUDGET) else "X"


def has_action_objective(inst: Instance) -> bool:
    """Settings whose target (seller utility, procured value) lives on the action side."""
    return inst.setting in (Setting.SELLER_UTILITY, Setting.PROCUREMENT)


def _valid(inst: Instance, i: int, t: int) -> bool:
    return t < inst.n_types[i]


def table_bounds(inst: Instance) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Box bounds of every holistic cell; padded (non-existent) types are pinned to 0."""
    shapes = table_shapes(inst)
    out: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    for name, shape in shapes.items():
        lo = np.zeros(shape)
        hi = np.zeros(shape)
        for i in range(inst.n):
            for t in range(inst.n_types[i]):
                lo_v, hi_v = _cell_range(inst, name, i, t)
                if inst.correlated and name in ("X", "P"):
                    for t2 in range(inst.n_types[i]):
                        lo[i, t, t2], hi[i, t, t2] = _cell_range(inst, name, i, t2)
                elif name == "U":
                    for t2 in range(inst.n_types[i]):
                        lo[i, t, t2], hi[i, t, t2] = lo_v, hi_v
                else:
                    lo[i, t], hi[i, t] = lo_v, hi_v
                if inst.setting is Setting.SELLER_UTILITY:
                    for pi, p in enumerate(inst.payment_grid):
                        for q in range(inst.m + 1):
                            if inst.buyer_utility_at(i, int(p), q, t) < 0:
                                hi[i, t, pi, q] = 0.0
        out[name] = (lo, hi)
    return out


def _cell_range(inst: Instance, name: str, i: int, t: int) -> tuple[float, float]:
    if name == "X":
        return 0.0, 1.0
    if name == "U":
        if inst.setting is Setting.SOFT_BUDGET:
            return -inst.max_soft_cost(i), inst.L
        return 0.0, inst.L
    if inst.setting is Setting.PROCUREMENT:
        return 0.0, float(inst.procurement_budget or 0.0)
    return 0.0, inst.payment_cap(i, t)


def _bic_allowed(inst: Instance, i: int, t: int, t2: int) -> bool:
    if t == t2:
        return False
    if inst.private_budgets:
        return inst.budget(i, t) >= inst.budget(i, t2)
    return True


def bic_rows(inst: Instance) -> list[InterimRow]:
    """Truthful reporting is weakly better than every (permitted) misreport."""
    rows: list[InterimRow] = []
    s = inst.setting
    for i in range(inst.n):
        for t in range(inst.n_types[i]):
            for t2 in range(inst.n_types[i]):
                if not _bic_allowed(inst, i, t, t2):
                    continue
                terms: list[Term] = []
                if s is Setting.MULTI_UNIT and inst.correlated:
                    for q in range(1, inst.m + 1):
                        v = inst.value(i, q, t)
                        terms += [("X", (i, t, t, q), v), ("X", (i, t, t2, q), -v)]
                    terms += [("P", (i, t, t), -1.0), ("P", (i, t, t2), 1.0)]
                elif s is Setting.MULTI_UNIT:
                    for q in range(1, inst.m + 1):
                        v = inst.value(i, q, t)
                        terms += [("X", (i, t, q), v), ("X", (i, t2, q), -v)]
                    terms += [("P", (i, t), -1.0), ("P", (i, t2), 1.0)]
                elif s in (Setting.QUITTING_RIGHTS, Setting.SOFT_BUDGET):
                    terms += [("U", (i, t, t), 1.0), ("U", (i, t2, t), -1.0)]
                elif s is Setting.SELLER_UTILITY:
                    for pi, p in enumerate(inst.payment_grid):
                        for q in range(inst.m + 1):
                            u = inst.buyer_utility_at(i, int(p), q, t)
                            if u != 0.0:
                                terms += [("X", (i, t, pi, q), u), ("X", (i, t2, pi, q), -u)]
                elif s is Setting.MULTI_ITEM:
                    for j in range(inst.m):
                        v = float(inst.values[i, t, j])
                        terms += [("X", (i, t, j), v), ("X", (i, t2, j), -v)]
                    terms += [("P", (i, t), -1.0), ("P", (i, t2), 1.0)]
                else:
                    c = float(inst.cost(i, t))
                    terms += [("P", (i, t), 1.0), ("X", (i, t), -c), ("P", (i, t2), -1.0), ("X", (i, t2), c)]
                labels = inst.type_labels[i]
                rows.append(InterimRow(tuple(terms), 0.0, f"bic[{i}]:{labels[t]}->{labels[t2]}"))
    return rows


def revenue_row(inst: Instance, R: float) -> Optional[InterimRow]:
    """Σ_i Σ_t f_i(t) P_i(t) >= R, or None when the target lives on the action side."""
    if has_action_objective(inst):
        return None
    terms: list[Term] = []
    for i in range(inst.n):
        f = inst.marginal(i)
        for t in range(inst.n_types[i]):
            idx = (i, t, t) if inst.correlated else (i, t)
            terms.append(("P", idx, float(f[t])))
    return InterimRow(tuple(terms), float(R), "revenue")


def simplex_rows(inst: Instance) -> list[InterimRow]:
    """Σ_q X = 1 for the unit-count tables (probability of receiving each quantity)."""
    rows: list[InterimRow] = []
    s = inst.setting
    for i in range(inst.n):
        for t in range(inst.n_types[i]):
            if s is Setting.MULTI_UNIT and inst.correlated:
                for t2 in range(inst.n_types[i]):
                    terms = tuple(("X", (i, t, t2, q), 1.0) for q in range(inst.m + 1))
                    rows.append(InterimRow(terms, 1.0, f"simplex[{i}]:{t},{t2}", equality=True))
            elif s is Setting.MULTI_UNIT:
                terms = tuple(("X", (i, t, q), 1.0) for q in range(inst.m + 1))
                rows.append(InterimRow(terms, 1.0, f"simplex[{i}]:{t}", equality=True))
            elif s is Setting.SELLER_UTILITY:
                terms = tuple(
                    ("X", (i, t, pi, q), 1.0)
                    for pi in range(len(inst.payment_grid))
                    for q in range(inst.m + 1)
                )
                rows.append(InterimRow(terms, 1.0, f"simplex[{i}]:{t}", equality=True))
    return rows


def interim_ir_rows(inst: Instance) -> list[InterimRow]:
    """Σ_j v X - P >= 0; only used in inequality mode where payments are all-pay."""
    rows = []
    if not inst.inequality_mode:
        return rows
    for i in range(inst.n):
        for t in range(inst.n_types[i]):
            terms = [("X", (i, t, j), float(inst.values[i, t, j])) for j in range(inst.m)]
            terms.append(("P", (i, t), -1.0))
            rows.append(InterimRow(tuple(terms), 0.0, f"ir[{i}]:{t}"))
    return rows


# ── Outcome features ─────────────────────────────────────────────────────


def buyer_features(
    inst: Instance, i: int, t_rep: int, outcome: "Outcome", t_real: Optional[int] = None
) -> list[Term]:
    """Non-zero table cells that one outcome contributes to for buyer i.

    ``t_real`` is the conditioning (true) type in correlated mode.
    """
    s = inst.setting
    a = outcome.allocation
    p = float(outcome.payments[i])
    if s is Setting.MULTI_UNIT:
        q = int(a[i])
        if inst.correlated:
            return [("X", (i, t_real, t_rep, q), 1.0), ("P", (i, t_real, t_rep), p)]
        return [("X", (i, t_rep, q), 1.0), ("P", (i, t_rep), p)]
    if s is Setting.QUITTING_RIGHTS:
        q = int(a[i])
        out = [("U", (i, t_rep, t2), max(inst.value(i, q, t2) - p, 0.0)) for t2 in range(inst.n_types[i])]
        return out + [("P", (i, t_rep), p)]
    if s is Setting.SOFT_BUDGET:
        q = int(a[i])
        c = inst.soft_cost(i, p)
        out = [("U", (i, t_rep, t2), inst.value(i, q, t2) - c) for t2 in range(inst.n_types[i])]
        return out + [("P", (i, t_rep), p)]
    if s is Setting.SELLER_UTILITY:
        return [("X", (i, t_rep, int(round(p)) + inst.L_int, int(a[i])), 1.0)]
    if s is Setting.MULTI_ITEM:
        out = [("X", (i, t_rep, j), float(a[i, j])) for j in range(inst.m) if a[i, j] != 0.0]
        return out + [("P", (i, t_rep), p)]
    return [("X", (i, t_rep), float(a[i])), ("P", (i, t_rep), p)]


def feature_scale(inst: Instance, name: str, i: int, t: int) -> float:
    """Largest magnitude a single outcome can contribute to a cell."""
    lo, hi = _cell_range(inst, name, i, t)
    return max(abs(lo), abs(hi))


# ── Solutions ────────────────────────────────────────────────────────────


@dataclass(eq=False)
class HolisticSolution:
    setting: Setting
    tables: dict[str, np.ndarray]
    half_widths: dict[str, np.ndarray] = field(default_factory=dict)
    revenue: float = math.nan
    revenue_half_width: float = 0.0
    objective: float = math.nan

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tables[name]

    @classmethod
    def zeros(cls, inst: Instance) -> "HolisticSolution":
        return cls(inst.setting, {k: np.zeros(v) for k, v in table_shapes(inst).items()})


def evaluate_rows(rows: Iterable[InterimRow], tables: dict[str, np.ndarray]) -> np.ndarray:
    return np.array([row.slack(tables) for row in rows], dtype=np.float64)


# ── Action-side objectives ───────────────────────────────────────────────


def action_value(inst: Instance, outcome: "Outcome") -> float:
    """Seller utility of the collected revenue, or the value of the procured set."""
    if inst.setting is Setting.SELLER_UTILITY:
        return inst.seller_utility_at(int(round(outcome.revenue)))
    if inst.setting is Setting.PROCUREMENT:
        return float(inst.procurement_values @ outcome.allocation)
    return outcome.revenue


def action_range(inst: Instance) -> tuple[float, float]:
    if inst.setting is Setting.SELLER_UTILITY:
        known = inst.seller_table[~np.isnan(inst.seller_table)]
        return float(known.min()), float(known.max())
    if inst.setting is Setting.PROCUREMENT:
        return 0.0, float(inst.procurement_values.sum())
    return 0.0, float(inst.n * inst.L)
