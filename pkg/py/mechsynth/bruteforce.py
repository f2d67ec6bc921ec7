"""
Ground truth on tiny instances.

``brute_force_opt`` solves the optimal-mechanism LP directly: one
probability variable per (scenario, action) pair, where the actions of a
scenario are the finite grid each oracle already proves sufficient
(allocations times candidate payments, the integer (p, q) grid, procured
sets with cost or top-up payments, item assignments).  Divisible
multi-item scenarios enter as continuous (x, p) blocks with their F(t)
rows.  Interim tables are linear in these variables, so the BIC rows of
``interim`` apply unchanged.

``brute_force_oracle`` maximises one round's dual objective by plain
enumeration.  It shares no candidate lists with the setting oracles: unit
and seller-utility payments come from their own grid and are admitted by
``check_outcome``, so tests can compare the two.
"""

from __future__ import annotations

import itertools
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np

from mechsynth.errors import CapExceeded, MechsynthError
from mechsynth.interim import (
    HolisticSolution,
    action_value,
    bic_rows,
    buyer_features,
    has_action_objective,
    interim_ir_rows,
    primary_table,
    table_shapes,
)
from mechsynth.lp import LpBuilder, LpError, Relation, Sense, solve_by_vertex_enumeration, solve_lp
from mechsynth.model import Instance, Setting, TypeVector
from mechsynth.oracles import DualSnapshot, Outcome, check_outcome
from mechsynth.oracles.multi_item import add_scenario_vars, scenario_program
from mechsynth.oracles.multi_unit import quitting_candidates, soft_candidates, z_weights
from mechsynth.oracles.seller_utility import buyer_options

logger = logging.getLogger(__name__)

BRUTE_FORCE_CAP = 60_000
PROB_TOL = 1e-12


class BruteForceError(MechsynthError):
    """The ground-truth LP did not reach an optimum."""


# ── Action grids ─────────────────────────────────────────────────────────


def _unit_payments(inst: Instance, i: int, q: int, t: int, grid_step: Optional[float]) -> list[float]:
    s = inst.setting
    if s is Setting.MULTI_UNIT:
        return sorted({0.0, max(min(inst.budget(i, t), inst.value(i, q, t)), 0.0)})
    if s is Setting.QUITTING_RIGHTS:
        return quitting_candidates(inst, i, q, t)
    cands = set(soft_candidates(inst, i, q, t))
    if grid_step:
        v = inst.value(i, q, t)
        cap = max(min(inst.budget(i, t), inst.L), 0.0)
        for k in range(int(math.floor(cap / grid_step)) + 1):
            p = k * grid_step
            if inst.soft_cost(i, p) <= v:
                cands.add(p)
    return sorted(cands)


def _buyer_options(inst: Instance, i: int, t: int, grid_step: Optional[float]) -> list[tuple[int, float]]:
    """(quantity, payment) pairs one buyer may receive in F(t)."""
    if inst.setting is Setting.SELLER_UTILITY:
        return [(q, float(p)) for p, q in buyer_options(inst, i, t)]
    return [(q, p) for q in range(inst.m + 1) for p in _unit_payments(inst, i, q, t, grid_step)]


def _unit_actions(inst: Instance, tvec: TypeVector, grid_step: Optional[float], cap: int) -> Iterator[Outcome]:
    options = [_buyer_options(inst, i, t, grid_step) for i, t in enumerate(tvec)]
    count = 0

    def walk(i: int, left: int, qs: list[int], ps: list[float]) -> Iterator[Outcome]:
        nonlocal count
        if i == inst.n:
            count += 1
            if count > cap:
                raise CapExceeded("actions of one scenario", count, cap)
            yield Outcome(np.array(qs, dtype=np.int64), np.array(ps, dtype=np.float64))
            return
        for q, p in options[i]:
            if q <= left:
                yield from walk(i + 1, left - q, qs + [q], ps + [p])

    yield from walk(0, inst.m, [], [])


def _procurement_actions(inst: Instance, tvec: TypeVector) -> Iterator[Outcome]:
    n, B = inst.n, inst.procurement_budget_int
    cost = [inst.cost(i, t) for i, t in enumerate(tvec)]
    for bits in itertools.product((0, 1), repeat=n):
        members = [i for i in range(n) if bits[i]]
        spent = sum(cost[i] for i in members)
        if spent > B:
            continue
        x = np.array(bits, dtype=np.int64)
        base = x * np.array(cost, dtype=np.float64)
        yield Outcome(x, base)
        if spent < B:
            for i in members:
                p = base.copy()
                p[i] += B - spent
                yield Outcome(x, p)


def _assignment_actions(inst: Instance) -> Iterator[Outcome]:
    for owners in itertools.product(range(inst.n + 1), repeat=inst.m):
        alloc = np.zeros((inst.n, inst.m))
        for j, owner in enumerate(owners):
            if owner < inst.n:
                alloc[owner, j] = 1.0
        yield Outcome(alloc, np.zeros(inst.n))


def scenario_actions(
    inst: Instance,
    tvec: TypeVector,
    *,
    grid_step: Optional[float] = None,
    cap: int = BRUTE_FORCE_CAP,
) -> list[Outcome]:
    """Finite action grid of a scenario; not defined for divisible multi-item."""
    if inst.inequality_mode:
        size = (inst.n + 1) ** inst.m
        if size > cap:
            raise CapExceeded("item assignments of one scenario", size, cap)
        return list(_assignment_actions(inst))
    if inst.setting is Setting.PROCUREMENT:
        return list(_procurement_actions(inst, tvec))
    if inst.setting is Setting.MULTI_ITEM:
        raise BruteForceError("divisible multi-item scenarios have no finite action grid")
    return list(_unit_actions(inst, tvec, grid_step, cap))


# ── Optimal mechanism ────────────────────────────────────────────────────


@dataclass
class BruteForceResult:
    opt: float
    distribution: dict[TypeVector, list[tuple[float, Outcome]]]
    tables: HolisticSolution
    n_vars: int = 0
    grid_step: Optional[float] = None

    def to_dict(self, inst: Instance) -> dict:
        scenarios = []
        for tvec, actions in self.distribution.items():
            scenarios.append({
                "types": [inst.type_labels[i][t] for i, t in enumerate(tvec)],
                "actions": [{"prob": prob, **o.to_dict()} for prob, o in actions],
            })
        return {"opt": self.opt, "grid_step": self.grid_step, "n_vars": self.n_vars, "scenarios": scenarios}


@dataclass
class _Scenario:
    tvec: TypeVector
    actions: list[Outcome] = field(default_factory=list)
    vars: list[int] = field(default_factory=list)
    x: Optional[np.ndarray] = None
    p: Optional[np.ndarray] = None

    def features(self, inst: Instance, i: int, t_real: Optional[int]) -> Iterator[tuple[str, tuple, int, float]]:
        t_rep = self.tvec[i]
        if self.x is not None:
            for j in range(inst.m):
                yield "X", (i, t_rep, j), int(self.x[i, j]), 1.0
            yield "P", (i, t_rep), int(self.p[i]), 1.0
            return
        for var, outcome in zip(self.vars, self.actions):
            for name, idx, coef in buyer_features(inst, i, t_rep, outcome, t_real):
                if coef != 0.0:
                    yield name, idx, var, coef


def _scenarios(inst: Instance) -> list[TypeVector]:
    if inst.correlated:
        return list(itertools.product(*(range(k) for k in inst.n_types)))
    return [tvec for tvec, _ in inst.prior.enumerate()]


def _replace(tvec: TypeVector, i: int, t: int) -> TypeVector:
    return tvec[:i] + (t,) + tvec[i + 1:]


def brute_force_opt(
    inst: Instance,
    *,
    cap: int = BRUTE_FORCE_CAP,
    grid_step: Optional[float] = None,
) -> BruteForceResult:
    """Exact optimum over randomized mechanisms whose outcomes stay in F(t).

    The objective is expected revenue, or expected seller utility /
    procured value for the action-side settings.  ``grid_step`` adds a
    uniform payment grid to the soft-budget candidates.
    """
    mu = dict(inst.prior.enumerate())
    b = LpBuilder()
    scen: dict[TypeVector, _Scenario] = {}
    divisible = inst.setting is Setting.MULTI_ITEM and not inst.inequality_mode

    for tvec in _scenarios(inst):
        sc = _Scenario(tvec)
        weight = mu.get(tvec, 0.0)
        if divisible:
            sc.x, sc.p = add_scenario_vars(b, tvec, inst)
            for i in range(inst.n):
                b.add_cost(int(sc.p[i]), weight)
        else:
            sc.actions = scenario_actions(inst, tvec, grid_step=grid_step, cap=cap)
            for outcome in sc.actions:
                value = 0.0 if inst.inequality_mode else weight * action_value(inst, outcome)
                sc.vars.append(b.add_var(0.0, 1.0, value))
            b.add_row({v: 1.0 for v in sc.vars}, Relation.EQ, 1.0)
        if b.n_vars > cap:
            raise CapExceeded("brute-force LP variables", b.n_vars, cap)
        scen[tvec] = sc

    cells: dict[tuple[str, tuple], dict[int, float]] = defaultdict(dict)

    def add(name: str, idx: tuple, var: int, coef: float) -> None:
        cell = cells[(name, idx)]
        cell[var] = cell.get(var, 0.0) + coef

    for tvec, weight in mu.items():
        for i in range(inst.n):
            t = tvec[i]
            scale = weight / float(inst.marginal(i)[t])
            reports = range(inst.n_types[i]) if inst.correlated else (t,)
            for t_rep in reports:
                sc = scen[_replace(tvec, i, t_rep)]
                for name, idx, var, coef in sc.features(inst, i, t if inst.correlated else None):
                    if inst.inequality_mode and name == "P":
                        continue
                    add(name, idx, var, scale * coef)

    rows = bic_rows(inst)
    if inst.inequality_mode:
        # all-pay: interim payments are free variables limited by interim IR
        for i in range(inst.n):
            f = inst.marginal(i)
            for t in range(inst.n_types[i]):
                var = b.add_var(0.0, inst.payment_cap(i, t), float(f[t]))
                cells[("P", (i, t))] = {var: 1.0}
        rows = rows + interim_ir_rows(inst)

    for row in rows:
        terms: dict[int, float] = defaultdict(float)
        for name, idx, coef in row.terms:
            for var, c in cells.get((name, idx), {}).items():
                terms[var] += coef * c
        b.add_row(terms, Relation.EQ if row.equality else Relation.GE, row.rhs)

    lp = b.build(Sense.MAX)
    logger.info("brute-force LP: %d variables, %d rows", lp.n_vars, lp.n_rows)
    sol = solve_lp(lp)
    if not sol.optimal:
        raise BruteForceError(f"optimal-mechanism LP ended with status {sol.status.value}")
    values = sol.values

    tables = {name: np.zeros(shape) for name, shape in table_shapes(inst).items()}
    for (name, idx), expr in cells.items():
        tables[name][idx] = sum(c * values[v] for v, c in expr.items())

    distribution: dict[TypeVector, list[tuple[float, Outcome]]] = {}
    revenue = 0.0
    for tvec, weight in mu.items():
        sc = scen[tvec]
        if divisible:
            x = np.clip(values[sc.x], 0.0, 1.0)
            p = np.clip(values[sc.p], 0.0, None)
            picks = [(1.0, Outcome(x, p))]
        else:
            picks = [(float(values[v]), o) for v, o in zip(sc.vars, sc.actions) if values[v] > PROB_TOL]
        distribution[tvec] = picks
        revenue += weight * sum(prob * o.revenue for prob, o in picks)
    if inst.inequality_mode:
        revenue = float(sol.objective_value)

    holistic = HolisticSolution(inst.setting, tables, revenue=revenue, objective=float(sol.objective_value))
    return BruteForceResult(float(sol.objective_value), distribution, holistic, lp.n_vars, grid_step)


# ── Reference oracle ─────────────────────────────────────────────────────
#
# Independent of the setting oracles: payments come from a uniform grid
# plus every value, budget and cost breakpoint of the buyer, and a
# (quantity, payment) pair is admissible exactly when check_outcome accepts
# it as the buyer's only award.

REFERENCE_STEP = 0.125
BISECT_TOL = 1e-12


def _dual_tables(inst: Instance, duals: DualSnapshot) -> dict[str, np.ndarray]:
    tables = {primary_table(inst): duals.alpha}
    if "P" in table_shapes(inst):
        tables["P"] = duals.beta
    return tables


def _buyer_term(
    inst: Instance, tables: dict[str, np.ndarray], i: int, tvec: TypeVector, outcome: Outcome
) -> float:
    if inst.correlated:
        z = z_weights(inst, i, tvec)
        pairs = [(t_real, z[t_real]) for t_real in range(inst.n_types[i]) if z[t_real] != 0.0]
    else:
        pairs = [(None, 1.0)]
    total = 0.0
    for t_real, w in pairs:
        for name, idx, coef in buyer_features(inst, i, tvec[i], outcome, t_real):
            total += w * coef * float(tables[name][idx])
    return total


def dual_objective(inst: Instance, duals: DualSnapshot, tvec: TypeVector, outcome: Outcome) -> float:
    """The value a round's oracle assigns to one outcome."""
    tables = _dual_tables(inst, duals)
    total = sum(_buyer_term(inst, tables, i, tvec, outcome) for i in range(inst.n))
    if has_action_objective(inst):
        total += duals.gamma * action_value(inst, outcome)
    return total


def _largest_affordable(inst: Instance, i: int, v: float, hi: float) -> Optional[float]:
    """Largest p in [0, hi] with c_i(p) <= v, found by bisection."""
    if inst.soft_cost(i, 0.0) > v:
        return None
    if inst.soft_cost(i, hi) <= v:
        return hi
    lo = 0.0
    while hi - lo > BISECT_TOL:
        mid = (lo + hi) / 2
        if inst.soft_cost(i, mid) <= v:
            lo = mid
        else:
            hi = mid
    return lo


def payment_points(inst: Instance, i: int, step: float = REFERENCE_STEP) -> list[float]:
    """Payments in [0, L] tried for buyer i by the reference oracle."""
    L = float(inst.L)
    points = {k * step for k in range(int(math.floor(L / step)) + 1)} | {L}
    values = {inst.value(i, q, t) for q in range(inst.m + 1) for t in range(inst.n_types[i])}
    points |= values
    points |= {inst.budget(i, t) for t in range(inst.n_types[i])}
    if inst.setting is Setting.SOFT_BUDGET:
        if inst.soft_costs is not None:
            points |= {float(b) for b in inst.soft_costs[i].breakpoints}
        points |= {p for p in (_largest_affordable(inst, i, v, L) for v in values) if p is not None}
    return sorted(p for p in points if 0.0 <= p <= L)


def _solo(inst: Instance, i: int, q: int, p: float) -> Outcome:
    alloc = np.zeros(inst.n, dtype=np.int64)
    pay = np.zeros(inst.n)
    alloc[i], pay[i] = q, p
    return Outcome(alloc, pay)


def _admissible(
    inst: Instance, tvec: TypeVector, i: int, payments: list[float]
) -> Iterator[tuple[int, float, Outcome]]:
    for q in range(inst.m + 1):
        for p in payments:
            outcome = _solo(inst, i, q, p)
            if not check_outcome(outcome, tvec, inst):
                yield q, p, outcome


def _unit_reference(inst: Instance, tables: dict[str, np.ndarray], tvec: TypeVector, step: float) -> float:
    n, m = inst.n, inst.m
    best = np.full((n, m + 1), -math.inf)
    for i in range(n):
        for q, _, outcome in _admissible(inst, tvec, i, payment_points(inst, i, step)):
            best[i, q] = max(best[i, q], _buyer_term(inst, tables, i, tvec, outcome))
    return max(
        sum(best[i, q] for i, q in enumerate(qs))
        for qs in itertools.product(range(m + 1), repeat=n)
        if sum(qs) <= m
    )


def _seller_reference(
    inst: Instance, duals: DualSnapshot, tables: dict[str, np.ndarray], tvec: TypeVector, cap: int
) -> float:
    grid = [float(p) for p in range(-inst.L_int, inst.L_int + 1)]
    options = [
        [(q, p, _buyer_term(inst, tables, i, tvec, o)) for q, p, o in _admissible(inst, tvec, i, grid)]
        for i in range(inst.n)
    ]
    size = math.prod(len(o) for o in options)
    if size > cap:
        raise CapExceeded("seller-utility actions of one scenario", size, cap)
    best = -math.inf
    for combo in itertools.product(*options):
        qs = [q for q, _, _ in combo]
        if sum(qs) > inst.m:
            continue
        outcome = Outcome(np.array(qs, dtype=np.int64), np.array([p for _, p, _ in combo]))
        value = sum(term for _, _, term in combo) + duals.gamma * action_value(inst, outcome)
        best = max(best, value)
    return best


def brute_force_oracle(
    setting: Setting,
    duals: DualSnapshot,
    tvec: TypeVector,
    inst: Instance,
    *,
    grid_step: Optional[float] = None,
    cap: int = BRUTE_FORCE_CAP,
) -> float:
    """Maximum of the round objective over one scenario by plain enumeration."""
    if setting is not inst.setting:
        raise BruteForceError(f"{setting.value} oracle asked for a {inst.setting.value} instance")
    if inst.setting is Setting.MULTI_ITEM and not inst.inequality_mode:
        lp, _, _ = scenario_program(duals, tvec, inst)
        try:
            sol = solve_by_vertex_enumeration(lp)
        except LpError as exc:
            raise CapExceeded("vertex enumeration of a scenario", lp.n_vars, cap) from exc
        if not sol.optimal:
            raise BruteForceError(f"scenario {tvec} has an empty feasible set")
        return float(sol.objective_value)
    tables = _dual_tables(inst, duals)
    if inst.setting in (Setting.MULTI_UNIT, Setting.QUITTING_RIGHTS, Setting.SOFT_BUDGET):
        return _unit_reference(inst, tables, tvec, grid_step or REFERENCE_STEP)
    if inst.setting is Setting.SELLER_UTILITY:
        return _seller_reference(inst, duals, tables, tvec, cap)
    actions = scenario_actions(inst, tvec, cap=cap)
    return max(dual_objective(inst, duals, tvec, o) for o in actions)
