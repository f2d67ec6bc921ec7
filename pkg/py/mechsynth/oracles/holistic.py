"""
The holistic subproblem: minimise the dual-weighted interim tables subject
to BIC, the revenue target and the box/simplex rows of the setting.

``HolisticProgram`` builds the constraint matrix once per instance; each
round only swaps the objective and the revenue right-hand side.
"""

from __future__ import annotations

import dataclasses
from typing import Optional

import numpy as np

from mechsynth.interim import (
    HolisticSolution,
    bic_rows,
    interim_ir_rows,
    primary_table,
    revenue_row,
    simplex_rows,
    table_bounds,
    table_shapes,
)
from mechsynth.lp import LinearProgram, LpBuilder, LpStatus, Relation, Sense, solve_lp
from mechsynth.model import Instance
from mechsynth.oracles.outcome import DualSnapshot, OracleError


class HolisticInfeasible(OracleError):
    """No interim tables meet the revenue target together with BIC."""

    def __init__(self, R: float):
        super().__init__(f"holistic LP infeasible at target {R:g}")
        self.R = R


def marginal_weights(inst: Instance) -> np.ndarray:
    w = np.zeros((inst.n, inst.T))
    for i in range(inst.n):
        w[i, : inst.n_types[i]] = inst.marginal(i)
    return w


def _spread(w: np.ndarray, ndim: int) -> np.ndarray:
    return w.reshape(w.shape + (1,) * (ndim - 2))


class HolisticProgram:
    def __init__(self, inst: Instance):
        self.inst = inst
        self.shapes = table_shapes(inst)
        self.primary = primary_table(inst)
        builder = LpBuilder()
        self.index: dict[str, np.ndarray] = {}
        for name, (lo, hi) in table_bounds(inst).items():
            idx = builder.add_vars(self.shapes[name])
            for flat, var in enumerate(idx.ravel()):
                builder.set_bounds(int(var), float(lo.ravel()[flat]), float(hi.ravel()[flat]))
            self.index[name] = idx
        for row in bic_rows(inst) + interim_ir_rows(inst) + simplex_rows(inst):
            rel = Relation.EQ if row.equality else Relation.GE
            builder.add_row(((self.index[name][idx], coef) for name, idx, coef in row.terms), rel, row.rhs)
        self.revenue_at: Optional[int] = None
        rev = revenue_row(inst, 0.0)
        if rev is not None:
            self.revenue_at = builder.n_rows
            builder.add_row(((self.index[name][idx], coef) for name, idx, coef in rev.terms), Relation.GE, 0.0)
        self.template: LinearProgram = builder.build(Sense.MIN)

    def solve(
        self,
        duals: DualSnapshot,
        R: float,
        type_weights: Optional[np.ndarray] = None,
    ) -> tuple[HolisticSolution, float]:
        w = marginal_weights(self.inst) if type_weights is None else type_weights
        cost = np.zeros(self.template.n_vars)
        alpha = duals.alpha * _spread(w, duals.alpha.ndim)
        cost[self.index[self.primary].ravel()] = alpha.ravel()
        if "P" in self.index:
            beta = duals.beta * _spread(w, duals.beta.ndim)
            cost[self.index["P"].ravel()] = beta.ravel()
        rhs = self.template.rhs.copy()
        if self.revenue_at is not None:
            rhs[self.revenue_at] = R
        lp = dataclasses.replace(self.template, objective=cost, rhs=rhs)
        sol = solve_lp(lp)
        if sol.status is LpStatus.INFEASIBLE:
            raise HolisticInfeasible(R)
        if sol.status is not LpStatus.OPTIMAL:
            raise OracleError(f"holistic LP returned {sol.status.value}")
        tables = {name: sol.values[idx] for name, idx in self.index.items()}
        return HolisticSolution(self.inst.setting, tables), float(sol.objective_value)


def solve_lp_exp(
    duals: DualSnapshot,
    inst: Instance,
    R: float,
    *,
    type_weights: Optional[np.ndarray] = None,
    program: Optional[HolisticProgram] = None,
) -> tuple[HolisticSolution, float]:
    """Minimise Σ_{i,t} w_i(t)(α·X + β·P) over BIC-feasible interim tables.

    ``type_weights`` defaults to the prior marginals f_i(t).
    """
    program = program or HolisticProgram(inst)
    return program.solve(duals, R, type_weights)
