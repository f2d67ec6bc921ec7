"""
Interim quantities of a synthesized mechanism and the checks built on them.

``exact_interim`` enumerates every (snapshot, type vector) pair and mixes
the giveaway and keep-coins in analytically; ``mc_interim`` replays sampled
executions and attaches 99% Hoeffding half-widths.  Both return the same
``HolisticSolution`` tables that LP_exp produces, so ``check_bic`` reuses
the BIC rows of ``interim``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from mechsynth.errors import CapExceeded, MechsynthError
from mechsynth.interim import (
    HolisticSolution,
    action_value,
    bic_rows,
    buyer_features,
    table_bounds,
    table_shapes,
)
from mechsynth.model import Instance, TypeVector
from mechsynth.oracles import Outcome, ViolationKind, WelfareOracle, check_outcome, solve_oracle
from mechsynth.reporting import VerificationReport, build_report
from mechsynth.runtime import (
    ExecutionTrace,
    all_pay_charges,
    check_mechanism,
    execute,
    expected_outcome,
    giveaway_outcome,
)
from mechsynth.synthesis import Mechanism

logger = logging.getLogger(__name__)

EXACT_CAP = 10_000_000
CONFIDENCE = 0.99
CERTIFICATE_TOL = 1e-9


class VerificationError(MechsynthError):
    """Base class for verification errors."""


def hoeffding_half_width(value_range: float, count: int, confidence: float = CONFIDENCE) -> float:
    if count <= 0:
        return math.inf
    return value_range * math.sqrt(math.log(2.0 / (1.0 - confidence)) / (2.0 * count))


# ── Exact interim ────────────────────────────────────────────────────────


def _replace(tvec: TypeVector, i: int, t: int) -> TypeVector:
    return tvec[:i] + (t,) + tvec[i + 1:]


class _OutcomeCache:
    """Per type vector, the expected outcome of every snapshot."""

    def __init__(self, mech: Mechanism, inst: Instance, welfare_oracle: Optional[WelfareOracle]):
        self.mech = mech
        self.inst = inst
        self.welfare_oracle = welfare_oracle
        self._cache: dict[TypeVector, list[Outcome]] = {}

    def __call__(self, tvec: TypeVector) -> list[Outcome]:
        if tvec not in self._cache:
            outs = []
            for snap in self.mech.snapshots:
                outcome, _ = solve_oracle(snap, tvec, self.inst, self.welfare_oracle)
                outs.append(expected_outcome(self.mech, tvec, outcome))
            self._cache[tvec] = outs
        return self._cache[tvec]


def exact_interim(
    mech: Mechanism,
    inst: Instance,
    *,
    cap: int = EXACT_CAP,
    welfare_oracle: Optional[WelfareOracle] = None,
) -> HolisticSolution:
    check_mechanism(mech, inst)
    support = list(inst.prior.enumerate())
    size = mech.K * len(support) * (inst.T if mech.correlated else 1)
    if size > cap:
        raise CapExceeded("exact interim evaluation", size, cap)

    outcomes = _OutcomeCache(mech, inst, welfare_oracle)
    eta = mech.eta if mech.private_budgets else 0.0
    gift = giveaway_outcome(inst) if eta > 0 else None
    acc = {name: np.zeros(shape) for name, shape in table_shapes(inst).items()}
    revenue = objective = 0.0

    for tvec, mu in support:
        mix = [(o, (1.0 - eta) / mech.K) for o in outcomes(tvec)]
        if gift is not None:
            mix.append((gift, eta))
        for o, w in mix:
            revenue += mu * w * o.revenue
            objective += mu * w * action_value(inst, o)
        for i in range(inst.n):
            t = tvec[i]
            f = float(inst.marginal(i)[t])
            if mech.correlated:
                for t_rep in range(inst.n_types[i]):
                    for o in outcomes(_replace(tvec, i, t_rep)):
                        for name, idx, coef in buyer_features(inst, i, t_rep, o, t):
                            acc[name][idx] += mu / (mech.K * f) * coef
            else:
                for o, w in mix:
                    for name, idx, coef in buyer_features(inst, i, t, o):
                        acc[name][idx] += mu * w / f * coef
    return HolisticSolution(inst.setting, acc, revenue=revenue, objective=objective)


# ── Monte Carlo interim ──────────────────────────────────────────────────


def _type_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed])))


def _replay_rng(seed: int, k: int, i: int, t: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, k, i + 1, t])))


def _monte_carlo(
    mech: Mechanism,
    inst: Instance,
    N: int,
    seed: int,
    welfare_oracle: Optional[WelfareOracle],
) -> tuple[HolisticSolution, list[ExecutionTrace]]:
    from mechsynth.runtime import execution_rng

    check_mechanism(mech, inst)
    if N < 1:
        raise VerificationError(f"need at least one Monte Carlo sample, got {N}")
    shapes = table_shapes(inst)
    draws = inst.prior.sample(_type_rng(seed), N)
    groups: dict[tuple[int, int], dict[str, list[np.ndarray]]] = {}
    traces: list[ExecutionTrace] = []
    revenues = np.empty(N)
    objectives = np.empty(N)

    def record(i: int, t_group: int, t_rep: int, outcome: Outcome, t_real: Optional[int]) -> None:
        slot = groups.setdefault((i, t_group), {name: [] for name in shapes})
        dense = {name: np.zeros(shape[2:]) for name, shape in shapes.items()}
        for name, idx, coef in buyer_features(inst, i, t_rep, outcome, t_real):
            dense[name][idx[2:]] += coef
        for name in shapes:
            slot[name].append(dense[name])

    for k in range(N):
        tvec = tuple(int(t) for t in draws[k])
        trace = execute(mech, inst, tvec, execution_rng(seed, k), welfare_oracle=welfare_oracle)
        traces.append(trace)
        revenues[k] = trace.revenue
        objectives[k] = action_value(inst, trace.outcome)
        for i in range(inst.n):
            if mech.correlated:
                for t_rep in range(inst.n_types[i]):
                    if t_rep == tvec[i]:
                        out = trace.outcome
                    else:
                        out = execute(mech, inst, _replace(tvec, i, t_rep), _replay_rng(seed, k, i, t_rep),
                                      welfare_oracle=welfare_oracle).outcome
                    record(i, tvec[i], t_rep, out, tvec[i])
            else:
                record(i, tvec[i], tvec[i], trace.outcome, None)

    bounds = table_bounds(inst)
    tables = {name: np.zeros(shape) for name, shape in shapes.items()}
    widths = {}
    for name, shape in shapes.items():
        lo, hi = bounds[name]
        widths[name] = np.where(hi > lo, hi - lo, 0.0).astype(np.float64)
    for (i, t), slot in groups.items():
        for name, rows in slot.items():
            stack = np.stack(rows)
            tables[name][i, t] = stack.mean(axis=0)
            spread = stack.max(axis=0) - stack.min(axis=0)
            widths[name][i, t] = hoeffding_half_width(1.0, len(rows)) * spread
    sol = HolisticSolution(
        inst.setting,
        tables,
        half_widths=widths,
        revenue=float(revenues.mean()),
        revenue_half_width=hoeffding_half_width(float(revenues.max() - revenues.min()), N),
        objective=float(objectives.mean()),
    )
    return sol, traces


def mc_interim(
    mech: Mechanism,
    inst: Instance,
    N: int,
    seed: int,
    *,
    welfare_oracle: Optional[WelfareOracle] = None,
) -> HolisticSolution:
    """Empirical interim tables from N sampled executions.

    Half-widths use the observed range of each cell, so a deterministic
    mechanism on a deterministic prior reports zero width.
    """
    sol, _ = _monte_carlo(mech, inst, N, seed, welfare_oracle)
    return sol


# ── Checks ───────────────────────────────────────────────────────────────


def _tables(holistic: Union[HolisticSolution, dict]) -> dict[str, np.ndarray]:
    return holistic.tables if isinstance(holistic, HolisticSolution) else holistic


def check_bic(holistic: Union[HolisticSolution, dict], inst: Instance) -> float:
    """Largest gain from a (permitted) misreport; 0 when truthful reporting is optimal."""
    tables = _tables(holistic)
    worst = 0.0
    for row in bic_rows(inst):
        worst = max(worst, -row.slack(tables))
    return worst


@dataclass(frozen=True)
class ExPostCounts:
    ir: int = 0
    budget: int = 0
    supply: int = 0
    other: int = 0
    checked: int = 0

    @property
    def clean(self) -> bool:
        return self.ir == self.budget == self.supply == self.other == 0


def _count(outcomes: list[tuple[Outcome, TypeVector]], inst: Instance, all_pay: bool) -> ExPostCounts:
    ir = budget = supply = other = 0
    for outcome, tvec in outcomes:
        kinds = {v.kind for v in check_outcome(outcome, tvec, inst, all_pay=all_pay)}
        ir += ViolationKind.IR in kinds
        budget += ViolationKind.BUDGET in kinds
        supply += ViolationKind.SUPPLY in kinds
        other += bool(kinds & {ViolationKind.PAYMENT, ViolationKind.POLYTOPE})
    return ExPostCounts(ir, budget, supply, other, len(outcomes))


def check_expost(
    mech: Mechanism,
    inst: Instance,
    traces: Optional[Sequence[ExecutionTrace]] = None,
    *,
    welfare_oracle: Optional[WelfareOracle] = None,
) -> ExPostCounts:
    """Exact F(t) membership of executed outcomes, or of every reachable outcome when ``traces`` is None."""
    if traces is not None:
        return _count([(tr.outcome, tr.types) for tr in traces], inst, mech.inequality_mode)
    check_mechanism(mech, inst)
    outcomes = []
    eta = mech.eta if mech.private_budgets else 0.0
    for tvec, _ in inst.prior.enumerate():
        for snap in mech.snapshots:
            outcome, _ = solve_oracle(snap, tvec, inst, welfare_oracle)
            if mech.inequality_mode:
                outcome = Outcome(outcome.allocation, all_pay_charges(mech, tvec))
            outcomes.append((outcome, tvec))
        if eta > 0:
            outcomes.append((giveaway_outcome(inst), tvec))
    return _count(outcomes, inst, mech.inequality_mode)


def max_eq_residual(interim: HolisticSolution, mech: Mechanism, inst: Instance) -> float:
    """Largest gap between the mechanism's interim tables and the tables it was coupled to."""
    if not mech.holistic:
        return math.nan
    bounds = table_bounds(inst)
    worst = 0.0
    names = ("X",) if mech.inequality_mode else tuple(mech.holistic)
    for name in names:
        target = mech.holistic[name]
        got = interim.tables[name]
        if mech.inequality_mode:
            got = got * mech.approximation
        lo, hi = bounds[name]
        gap = np.abs(got - target)[hi > lo]
        worst = max(worst, float(gap.max(initial=0.0)))
    return worst


@dataclass(frozen=True)
class Certificate:
    """Exact BIC violation and objective of a synthesized mechanism against its target."""

    bic_violation: float
    value: float
    target: float
    epsilon: float

    @property
    def passed(self) -> bool:
        return (
            self.bic_violation <= self.epsilon + CERTIFICATE_TOL
            and self.value >= self.target - self.epsilon / 2 - CERTIFICATE_TOL
        )


def certify_mechanism(
    mech: Mechanism,
    inst: Instance,
    epsilon: float,
    *,
    cap: int = EXACT_CAP,
    welfare_oracle: Optional[WelfareOracle] = None,
) -> Certificate:
    """Exact check that ``mech`` is ε-BIC and gets within ε/2 of its target.

    The value is the expected objective (revenue unless the instance
    optimises a seller or buyer utility).  Raises CapExceeded when the
    support is too large to enumerate.
    """
    interim = exact_interim(mech, inst, cap=cap, welfare_oracle=welfare_oracle)
    return Certificate(check_bic(interim, inst), interim.objective, mech.R, epsilon)


def verify_mechanism(
    mech: Mechanism,
    inst: Instance,
    *,
    epsilon: float,
    mode: str = "exact",
    mc_samples: int = 10_000,
    seed: int = 0,
    opt: Optional[float] = None,
    welfare_oracle: Optional[WelfareOracle] = None,
) -> VerificationReport:
    if mode == "exact":
        interim = exact_interim(mech, inst, welfare_oracle=welfare_oracle)
        counts = check_expost(mech, inst, welfare_oracle=welfare_oracle)
        label = "exact"
        spread = 0.0
    else:
        interim, traces = _monte_carlo(mech, inst, mc_samples, seed, welfare_oracle)
        counts = check_expost(mech, inst, traces)
        label = f"mc({mc_samples})"
        spread = max((float(w.max(initial=0.0)) for w in interim.half_widths.values()), default=0.0)
    delta = float(mech.config.get("resolved", {}).get("delta", 0.0))
    bic = check_bic(interim, inst)
    residual = max_eq_residual(interim, mech, inst)
    logger.info("verified %s: revenue %.6g, BIC %.4g, EQ %.4g", inst.name or "instance", interim.revenue, bic, residual)
    return build_report(
        inst.name or "instance",
        label,
        epsilon,
        revenue=interim.revenue,
        revenue_half_width=interim.revenue_half_width,
        objective=interim.objective,
        target=mech.R,
        max_eq_residual=residual,
        eq_tolerance=3 * delta + spread,
        max_bic_violation=bic,
        ir_violations=counts.ir,
        budget_violations=counts.budget,
        supply_violations=counts.supply + counts.other,
        opt=opt,
    )
