"""
Multi-item oracles.

With divisible items F(t) is a polytope (supply, IR, budget, optional
envy-freeness and caller-supplied rows) and the per-scenario problem is an
LP.  In inequality mode items are indivisible and the oracle is plain
welfare maximisation with non-negative weights; any c-approximate
maximiser may be plugged in through ``WelfareOracle``.
"""

from __future__ import annotations

from typing import Protocol

import numpy as np

from mechsynth.lp import LpBuilder, LpStatus, Relation, Sense, solve_lp
from mechsynth.model import Instance, TypeVector
from mechsynth.oracles.outcome import DualSnapshot, InfeasibleScenario, NegativeDual, Outcome


def add_scenario_vars(b: LpBuilder, tvec: TypeVector, inst: Instance) -> tuple[np.ndarray, np.ndarray]:
    """Variables and F(t) rows of one divisible-item scenario inside a larger program."""
    n, m = inst.n, inst.m
    x = b.add_vars((n, m), 0.0, 1.0)
    p = np.array([b.add_var(0.0, inst.payment_cap(i, t)) for i, t in enumerate(tvec)])
    for j in range(m):
        b.add_row({x[i, j]: 1.0 for i in range(n)}, Relation.LE, float(inst.supply[j]))
    for i, t in enumerate(tvec):
        row = {x[i, j]: float(inst.values[i, t, j]) for j in range(m)}
        row[p[i]] = -1.0
        b.add_row(row, Relation.GE, 0.0)
    for poly in inst.polytope_rows:
        terms = [(x[i, j], poly.x[i][j]) for i in range(n) for j in range(m)]
        terms += [(p[i], poly.p[i]) for i in range(n)]
        b.add_row(terms, poly.rel, poly.rhs)
    if inst.envy_free:
        for i, t in enumerate(tvec):
            for k in range(n):
                if k == i:
                    continue
                terms = [(x[i, j], float(inst.values[i, t, j])) for j in range(m)]
                terms += [(x[k, j], -float(inst.values[i, t, j])) for j in range(m)]
                terms += [(p[i], -1.0), (p[k], 1.0)]
                b.add_row(terms, Relation.GE, 0.0)
    return x, p


def scenario_program(duals: DualSnapshot, tvec: TypeVector, inst: Instance) -> tuple:
    """LP of one scenario: returns (LinearProgram, x index grid, p index vector)."""
    b = LpBuilder()
    x, p = add_scenario_vars(b, tvec, inst)
    for i, t in enumerate(tvec):
        for j in range(inst.m):
            b.add_cost(x[i, j], float(duals.alpha[i, t, j]))
        b.add_cost(p[i], float(duals.beta[i, t]))
    return b.build(Sense.MAX), x, p


def _repair(x: np.ndarray, p: np.ndarray, tvec: TypeVector, inst: Instance) -> tuple[np.ndarray, np.ndarray]:
    """Remove round-off so supply, IR and budget rows hold exactly."""
    x = np.clip(x, 0.0, 1.0)
    for j in range(inst.m):
        total = x[:, j].sum()
        if total > inst.supply[j]:
            x[:, j] *= inst.supply[j] / total
            while x[:, j].sum() > inst.supply[j]:
                x[:, j] = np.nextafter(x[:, j], 0.0)
    for i, t in enumerate(tvec):
        p[i] = min(max(p[i], 0.0), inst.payment_cap(i, t), float(inst.values[i, t] @ x[i]))
    return x, p


def oracle_multi_item_lp(duals: DualSnapshot, tvec: TypeVector, inst: Instance) -> tuple[Outcome, float]:
    lp, x_idx, p_idx = scenario_program(duals, tvec, inst)
    sol = solve_lp(lp)
    if sol.status is not LpStatus.OPTIMAL:
        raise InfeasibleScenario(f"multi-item scenario {tvec} has status {sol.status.value}")
    x, p = _repair(sol.values[x_idx].copy(), sol.values[p_idx].copy(), tvec, inst)
    return Outcome(x, p), scenario_value(duals, tvec, x, p)


def scenario_value(duals: DualSnapshot, tvec: TypeVector, x: np.ndarray, p: np.ndarray) -> float:
    """Dual-weighted value Σ α x + Σ β p of an outcome."""
    return float(sum(duals.alpha[i, t] @ x[i] + duals.beta[i, t] * p[i] for i, t in enumerate(tvec)))


class WelfareOracle(Protocol):
    """Maximises Σ α x over integral allocations within a factor ``approximation``."""

    approximation: float

    def __call__(self, duals: DualSnapshot, tvec: TypeVector, inst: Instance) -> tuple[Outcome, float]: ...


def oracle_welfare_downward_closed(duals: DualSnapshot, tvec: TypeVector, inst: Instance) -> tuple[Outcome, float]:
    n, m = inst.n, inst.m
    weights = np.array([duals.alpha[i, t, :] for i, t in enumerate(tvec)]).reshape(n, m)
    if np.any(weights < 0):
        raise NegativeDual("welfare oracle needs non-negative multipliers")
    alloc = np.zeros((n, m))
    value = 0.0
    for j in range(m):
        i = int(np.argmax(weights[:, j]))
        if weights[i, j] > 0.0:
            alloc[i, j] = 1.0
            value += float(weights[i, j])
    return Outcome(alloc, np.zeros(n)), value


class ExactWelfareOracle:
    approximation = 1.0

    def __call__(self, duals: DualSnapshot, tvec: TypeVector, inst: Instance) -> tuple[Outcome, float]:
        return oracle_welfare_downward_closed(duals, tvec, inst)
