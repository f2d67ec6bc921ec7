"""
End-to-end mechanism synthesis.

Each round couples the holistic tables of the LP_exp subproblem to the
average behaviour of the per-scenario oracle on this round's scenarios.
Every coupled cell becomes two experts (avg - X >= -δ and X - avg >= -δ);
the oracle duals are the weight differences.  In inequality mode cells are
one-sided (c·avg - X >= -δ) and the action side is a welfare oracle.
Seller-utility and procurement instances add one action-side row
(expected objective >= R) whose weight is the γ of the oracle.

The result is a uniform mixture over the rounds' dual snapshots; runtime
re-solves the oracle of the chosen snapshot on the reported types.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, Optional, Union

import numpy as np
from pydantic import BaseModel, Field, model_validator

from mechsynth.errors import CapExceeded, MechsynthError
from mechsynth.interim import (
    HolisticSolution,
    action_range,
    action_value,
    buyer_features,
    has_action_objective,
    primary_table,
    table_bounds,
    table_shapes,
)
from mechsynth.model import Instance, InstanceError, Setting, TypeVector, compute_width_params, validate_instance
from mechsynth.mwu import (
    TerminationStatus,
    RoundConstraints,
    average_violation,
    run_generalized_ahk,
)
from mechsynth.oracles import (
    DualSnapshot,
    HolisticInfeasible,
    HolisticProgram,
    Outcome,
    WelfareOracle,
    dual_shapes,
    solve_oracle,
)
from mechsynth.oracles.multi_unit import z_weights

if TYPE_CHECKING:
    from mechsynth.verify import Certificate

logger = logging.getLogger(__name__)


class SynthesisError(MechsynthError):
    """Synthesis cannot produce any mechanism (e.g. the zero target fails)."""


class DegenerateRatio(SynthesisError):
    """The unscaled mechanism never allocates an item whose target is positive."""


class SamplingMode(str, Enum):
    EXACT = "exact"
    SAMPLED = "sampled"
    AUTO = "auto"


class SynthesisConfig(BaseModel):
    epsilon: float = Field(gt=0)
    delta: Optional[float] = Field(default=None, gt=0)
    samples: Optional[int] = Field(default=None, ge=1)
    rounds: Optional[int] = Field(default=None, ge=1)
    round_cap: int = Field(default=20_000, ge=1)
    sample_cap: int = Field(default=20_000, ge=1)
    eps_mwu: Optional[float] = Field(default=None, gt=0, lt=0.5)
    early_stop: bool = True
    residual_target: Optional[float] = Field(default=None, gt=0)
    sampling: SamplingMode = SamplingMode.AUTO
    exact_cap: int = Field(default=4096, ge=1)
    eta: Optional[float] = Field(default=None, ge=0, le=1)
    approximation: float = Field(default=1.0, ge=1)
    threads: int = Field(default=1, ge=1)
    retry_infeasible: bool = False
    normalize: bool = True
    certify: bool = True
    max_tightenings: int = Field(default=4, ge=0)
    seed: int = 0

    @model_validator(mode="after")
    def _target_not_looser_than_epsilon(self) -> "SynthesisConfig":
        if self.delta is not None and self.delta > self.epsilon:
            raise ValueError(f"delta={self.delta} exceeds epsilon={self.epsilon}")
        return self


@dataclass(frozen=True)
class SynthesisParams:
    """Config values after instance-dependent defaults have been filled in."""

    delta: float
    rho: float
    rows: int
    rounds: int
    samples: int
    eps_mwu: float
    residual_target: float
    exact: bool
    eta: float
    l_effective: float = math.nan
    z_max: float = 1.0

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def resolve_params(inst: Instance, config: SynthesisConfig, system: "ConstraintSystem") -> SynthesisParams:
    n, m, L = inst.n, max(inst.m, 1), inst.L
    delta = system.delta
    target = config.residual_target or delta
    rho = system.rho
    r = max(system.r, 2)
    eps = config.eps_mwu or min(0.1, target / (2 * rho))
    rounds = config.rounds or min(config.round_cap, math.ceil(4 * rho**2 * math.log(r) / target**2))
    samples = config.samples or min(
        config.sample_cap,
        math.ceil(n * m * L**3 * math.log(max(n * m * L * rounds, 2.0)) / config.epsilon),
    )
    if config.sampling is SamplingMode.EXACT:
        exact = True
    elif config.sampling is SamplingMode.SAMPLED:
        exact = False
    else:
        exact = inst.prior.support_size <= config.exact_cap
    if not exact:
        needed = hoeffding_sample_size(inst, delta)
        if samples < needed:
            logger.debug("C=%d is below the Hoeffding size %d for delta=%.4g", samples, needed, delta)
    eta = 0.0
    if inst.private_budgets:
        bound = config.epsilon / (2 * L * inst.n)
        eta = min(1e-6, bound) if config.eta is None else config.eta
        if eta > bound:
            raise SynthesisError(f"eta={eta} exceeds epsilon/(2 L n) = {bound:.6g}")
    widths = compute_width_params(inst)
    if inst.correlated and not widths.full_conditional_support:
        logger.warning("joint prior lacks some conditional types; their z-ratios are taken as 0")
    return SynthesisParams(
        delta, rho, system.r, rounds, samples, eps, target, exact, eta, widths.l_effective, widths.z_max
    )


def default_delta(inst: Instance, config: SynthesisConfig) -> float:
    return config.delta or config.epsilon / (inst.n * max(inst.m, 1) * inst.L)


def hoeffding_sample_size(inst: Instance, delta: float, failure: float = 0.01) -> int:
    """Scenarios per round that put every cell average within δ of its prior value w.p. 1 - failure.

    Hoeffding on each cell's conditional average, union-bounded over cells,
    plus a Chernoff bound that every (buyer, type) group gets at least half
    its expected share of the draws.
    """
    bounds = table_bounds(inst)
    spread = max(float((hi - lo).max(initial=0.0)) for lo, hi in bounds.values())
    if inst.correlated:
        spread *= max(float(correlated_scale(inst).max(initial=0.0)), 1.0)
    cells = sum(lo.size for lo, _ in bounds.values())
    groups = sum(inst.n_types)
    f_min = min(float(f) for i in range(inst.n) for f in inst.marginal(i) if f > 0)
    per_group = spread**2 * math.log(4 * cells / failure) / (2 * delta**2)
    share = max(2 * per_group, 8 * math.log(4 * groups / failure))
    return math.ceil(share / f_min)


# ── Mechanism ────────────────────────────────────────────────────────────


@dataclass(frozen=True, eq=False)
class Mechanism:
    """Uniform mixture over K dual snapshots plus the execution wrappers.

    ``holistic`` holds the round-averaged LP_exp tables the mechanism was
    coupled to; in inequality mode ``holistic["X"]`` and ``holistic["P"]``
    are the targets of the scaling fix and the all-pay charges.
    """

    setting: Setting
    snapshots: tuple[DualSnapshot, ...]
    R: float
    fingerprint: str
    n: int
    T: int
    m: int
    private_budgets: bool = False
    eta: float = 0.0
    correlated: bool = False
    inequality_mode: bool = False
    approximation: float = 1.0
    scaling: Optional[np.ndarray] = None
    holistic: dict[str, np.ndarray] = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.snapshots:
            raise SynthesisError("a mechanism needs at least one dual snapshot")
        if self.scaling is not None and (np.any(self.scaling < 0) or np.any(self.scaling > 1)):
            raise SynthesisError("scaling factors must lie in [0, 1]")

    @property
    def K(self) -> int:
        return len(self.snapshots)


@dataclass(frozen=True)
class InfeasibleAt:
    R: float
    round: Optional[int]
    reason: str


@dataclass(frozen=True)
class RoundLog:
    round: int
    max_violation: float
    c_value: float
    yb: float


@dataclass
class SynthesisRun:
    result: Union[Mechanism, InfeasibleAt]
    params: SynthesisParams
    log: list[RoundLog] = field(default_factory=list)
    residual: float = math.nan
    certificate: Optional["Certificate"] = None

    @property
    def feasible(self) -> bool:
        return isinstance(self.result, Mechanism)


# ── Scenarios of a round ─────────────────────────────────────────────────


@dataclass(frozen=True, eq=False)
class RoundSample:
    """Scenarios of one round with their weights; ``mass[i, t]`` sums the weights with t_i = t."""

    vectors: np.ndarray
    weights: np.ndarray
    mass: np.ndarray

    @property
    def total(self) -> float:
        return float(self.weights.sum())

    @classmethod
    def from_vectors(cls, inst: Instance, vectors: np.ndarray, weights: np.ndarray) -> "RoundSample":
        mass = np.zeros((inst.n, inst.T))
        for i in range(inst.n):
            np.add.at(mass[i], vectors[:, i], weights)
        return cls(vectors, weights, mass)

    @classmethod
    def exact(cls, inst: Instance) -> "RoundSample":
        vectors, probs = inst.prior.support_arrays()
        return cls.from_vectors(inst, vectors, probs)

    @classmethod
    def sampled(cls, inst: Instance, C: int, rng: np.random.Generator) -> "RoundSample":
        draws = inst.prior.sample(rng, C)
        vectors, counts = np.unique(draws, axis=0, return_counts=True)
        return cls.from_vectors(inst, vectors, counts.astype(np.float64))


def round_rng(seed: int, ell: int, attempt: int = 0) -> np.random.Generator:
    key = [seed, ell] if attempt == 0 else [seed, ell, attempt]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))


# ── Constraint system ────────────────────────────────────────────────────


def _spread(mass: np.ndarray, ndim: int, axis: int) -> np.ndarray:
    n, T = mass.shape
    if axis == 1:
        return mass.reshape((n, T) + (1,) * (ndim - 2))
    return mass.reshape((n, 1, T) + (1,) * (ndim - 3))


def correlated_scale(inst: Instance) -> np.ndarray:
    """max over t_{-i} of z·f(t')/f(t), the largest weight a single scenario puts on cell (i, t, t')."""
    n, T = inst.n, inst.T
    scale = np.zeros((n, T, T))
    for tvec, _ in inst.prior.enumerate():
        for i in range(n):
            f = inst.marginal(i)
            z = z_weights(inst, i, tvec)
            t_rep = tvec[i]
            for t in range(inst.n_types[i]):
                if f[t] > 0:
                    scale[i, t, t_rep] = max(scale[i, t, t_rep], z[t] * f[t_rep] / f[t])
    return scale


def marginal_ratio(inst: Instance) -> np.ndarray:
    """f_i(t') / f_i(t) indexed [i, t, t'] (zero where f_i(t) = 0)."""
    ratio = np.zeros((inst.n, inst.T, inst.T))
    for i in range(inst.n):
        f = inst.marginal(i)
        for t in range(inst.n_types[i]):
            if f[t] > 0:
                ratio[i, t, : inst.n_types[i]] = f[: inst.n_types[i]] / f[t]
    return ratio


@dataclass(eq=False)
class ConstraintSystem:
    """Row layout shared by every round of one synthesis run.

    Rows are ``[plus experts | minus experts | objective row]``; the minus
    block is absent in inequality mode and the objective row only exists
    for seller-utility and procurement instances.
    """

    inst: Instance
    R: float
    delta: float
    approximation: float
    names: tuple[str, ...]
    cells: dict[str, np.ndarray]
    offsets: dict[str, int]
    n_cells: int
    one_sided: bool
    objective_row: bool
    widths: np.ndarray

    @classmethod
    def build(cls, inst: Instance, R: float, delta: float, approximation: float = 1.0) -> "ConstraintSystem":
        shapes = table_shapes(inst)
        bounds = table_bounds(inst)
        one_sided = inst.inequality_mode
        names = ("X",) if one_sided else tuple(shapes)
        c = approximation if one_sided else 1.0
        zscale = correlated_scale(inst) if inst.correlated else None

        cells: dict[str, np.ndarray] = {}
        offsets: dict[str, int] = {}
        plus_w: list[np.ndarray] = []
        minus_w: list[np.ndarray] = []
        total = 0
        for name in names:
            lo, hi = bounds[name]
            scale = np.ones(shapes[name])
            if zscale is not None:
                scale = np.broadcast_to(zscale.reshape(zscale.shape + (1,) * (len(shapes[name]) - 3)), shapes[name])
            flo, fhi = c * lo * scale, c * hi * scale
            idx = np.flatnonzero((hi > lo).ravel())
            cells[name] = idx
            offsets[name] = total
            total += len(idx)
            plus_w.append((np.maximum(np.abs(fhi - lo), np.abs(flo - hi)) + delta).ravel()[idx])
            minus_w.append((np.maximum(np.abs(hi - flo), np.abs(lo - fhi)) + delta).ravel()[idx])
        widths = list(plus_w)
        if not one_sided:
            widths += minus_w
        objective_row = has_action_objective(inst)
        if objective_row:
            lo, hi = action_range(inst)
            widths.append(np.array([max(abs(hi - R + delta), abs(lo - R + delta), delta)]))
        return cls(
            inst=inst,
            R=float(R),
            delta=delta,
            approximation=approximation,
            names=names,
            cells=cells,
            offsets=offsets,
            n_cells=total,
            one_sided=one_sided,
            objective_row=objective_row,
            widths=np.concatenate(widths) if widths else np.zeros(0),
        )

    @property
    def r(self) -> int:
        return len(self.widths)

    @property
    def rho(self) -> float:
        return float(self.widths.max(initial=self.delta))

    def gather(self, tables: dict[str, np.ndarray]) -> np.ndarray:
        if not self.names:
            return np.zeros(0)
        return np.concatenate([tables[name].ravel()[self.cells[name]] for name in self.names])

    def scatter(self, vec: np.ndarray) -> dict[str, np.ndarray]:
        shapes = table_shapes(self.inst)
        out = {}
        for name in self.names:
            arr = np.zeros(math.prod(shapes[name]))
            k = self.offsets[name]
            arr[self.cells[name]] = vec[k: k + len(self.cells[name])]
            out[name] = arr.reshape(shapes[name])
        return out

    def group_axis(self) -> int:
        return 2 if self.inst.correlated else 1

    def cell_mass(self, sample: RoundSample) -> np.ndarray:
        shapes = table_shapes(self.inst)
        tables = {
            name: np.broadcast_to(_spread(sample.mass, len(shapes[name]), self.group_axis()), shapes[name])
            for name in self.names
        }
        return self.gather(tables)


@dataclass(eq=False)
class RoundSolution:
    holistic: HolisticSolution
    averages: dict[str, np.ndarray]
    objective_average: float
    snapshot: DualSnapshot


def build_round_constraints(
    system: ConstraintSystem, sample: RoundSample
) -> RoundConstraints:
    """Rows of one round: b = -δ on every coupled cell with scenarios, R - δ on the objective row."""
    N = system.n_cells
    active_cells = system.cell_mass(sample) > 0
    blocks_b = [np.full(N, -system.delta)]
    blocks_a = [active_cells]
    if not system.one_sided:
        blocks_b.append(np.full(N, -system.delta))
        blocks_a.append(active_cells)
    if system.objective_row:
        blocks_b.append(np.array([system.R - system.delta]))
        blocks_a.append(np.array([True]))
    b = np.concatenate(blocks_b)
    active = np.concatenate(blocks_a)
    c = system.approximation if system.one_sided else 1.0

    def evaluate(solution: RoundSolution) -> np.ndarray:
        X = system.gather(solution.holistic.tables)
        avg = system.gather(solution.averages)
        out = [c * avg - X]
        if not system.one_sided:
            out.append(X - avg)
        if system.objective_row:
            out.append(np.array([solution.objective_average]))
        return np.concatenate(out)

    return RoundConstraints(b=b, widths=system.widths, evaluate=evaluate, active=active, payload=sample)


def draw_round_sample(
    inst: Instance, params: SynthesisParams, seed: int, ell: int, attempt: int = 0
) -> RoundSample:
    if params.exact:
        return RoundSample.exact(inst)
    return RoundSample.sampled(inst, params.samples, round_rng(seed, ell, attempt))


# ── Combined oracle ──────────────────────────────────────────────────────


def _oracle_duals(
    system: ConstraintSystem, alpha: dict[str, np.ndarray], sample: RoundSample, gamma: float
) -> DualSnapshot:
    inst = system.inst
    W = sample.total
    tilde: dict[str, np.ndarray] = {}
    for name, a in alpha.items():
        mass = _spread(sample.mass, a.ndim, system.group_axis())
        t = np.divide(a * W, mass, out=np.zeros_like(a), where=np.broadcast_to(mass > 0, a.shape))
        if system.one_sided:
            t = t * system.approximation
        if inst.correlated:
            ratio = marginal_ratio(inst)
            t = t * ratio.reshape(ratio.shape + (1,) * (a.ndim - 3))
        tilde[name] = t
    alpha_shape, beta_shape = dual_shapes(inst)
    primary = tilde.get(primary_table(inst), np.zeros(alpha_shape))
    return DualSnapshot(inst.setting, primary, tilde.get("P", np.zeros(beta_shape)), float(gamma))


def sample_averages(
    system: ConstraintSystem,
    sample: RoundSample,
    outcomes: list[Outcome],
) -> tuple[dict[str, np.ndarray], float]:
    """Per-cell averages of the outcomes over their conditioning groups, and the mean objective."""
    inst = system.inst
    shapes = table_shapes(inst)
    acc = {name: np.zeros(shapes[name]) for name in system.names}
    objective = 0.0
    for s, outcome in enumerate(outcomes):
        w = float(sample.weights[s])
        tvec: TypeVector = tuple(int(t) for t in sample.vectors[s])
        for i in range(inst.n):
            if inst.correlated:
                z = z_weights(inst, i, tvec)
                f = inst.marginal(i)
                for t_real in range(inst.n_types[i]):
                    if z[t_real] == 0.0 or f[t_real] == 0.0:
                        continue
                    k = z[t_real] * f[tvec[i]] / f[t_real]
                    for name, idx, coef in buyer_features(inst, i, tvec[i], outcome, t_real):
                        acc[name][idx] += w * k * coef
            else:
                for name, idx, coef in buyer_features(inst, i, tvec[i], outcome):
                    if name in acc:
                        acc[name][idx] += w * coef
        if system.objective_row:
            objective += w * action_value(inst, outcome)
    averages = {}
    for name, total in acc.items():
        mass = np.broadcast_to(_spread(sample.mass, total.ndim, system.group_axis()), total.shape)
        averages[name] = np.divide(total, mass, out=np.zeros_like(total), where=mass > 0)
    return averages, objective / sample.total


def combined_oracle(
    system: ConstraintSystem,
    rc: RoundConstraints,
    y: np.ndarray,
    program: HolisticProgram,
    *,
    welfare_oracle: Optional[WelfareOracle] = None,
    executor: Optional[ThreadPoolExecutor] = None,
) -> tuple[Optional[RoundSolution], float]:
    """Maximise y·(A x) over (holistic tables, per-scenario outcomes).

    Returns ``(None, -inf)`` when LP_exp has no point at the target, which
    the engine reads as an infeasibility signal.
    """
    inst = system.inst
    sample: RoundSample = rc.payload
    N = system.n_cells
    act = rc.active[:N]
    a = y[:N] if system.one_sided else y[:N] - y[N: 2 * N]
    alpha = system.scatter(np.where(act, a, 0.0))
    gamma = float(y[-1]) if system.objective_row else 0.0

    alpha_shape, beta_shape = dual_shapes(inst)
    lp_duals = DualSnapshot(
        inst.setting,
        alpha.get(primary_table(inst), np.zeros(alpha_shape)),
        alpha.get("P", np.zeros(beta_shape)),
    )
    try:
        holistic, lp_min = program.solve(lp_duals, system.R, np.ones((inst.n, inst.T)))
    except HolisticInfeasible:
        return None, -math.inf

    snapshot = _oracle_duals(system, alpha, sample, gamma)
    vectors = [tuple(int(t) for t in row) for row in sample.vectors]

    def solve(tvec: TypeVector) -> tuple[Outcome, float]:
        return solve_oracle(snapshot, tvec, inst, welfare_oracle)

    results = list(executor.map(solve, vectors)) if executor else [solve(t) for t in vectors]
    outcomes = [o for o, _ in results]
    values = np.array([v for _, v in results])
    averages, objective = sample_averages(system, sample, outcomes)
    c_value = float(sample.weights @ values) / sample.total - lp_min
    return RoundSolution(holistic, averages, objective, snapshot), c_value


# ── Drivers ──────────────────────────────────────────────────────────────


def synthesize(
    inst: Instance,
    config: SynthesisConfig,
    R: float,
    *,
    program: Optional[HolisticProgram] = None,
    welfare_oracle: Optional[WelfareOracle] = None,
) -> SynthesisRun:
    """One run of the engine at target ``R``.

    With exact scenarios every mechanism is certified by exact interim
    evaluation: a mechanism that is not ε-BIC or misses R by more than ε/2
    is re-synthesized with δ halved, at most ``config.max_tightenings``
    times, and is reported infeasible ("certificate") after that.
    """
    problems = validate_instance(inst)
    if problems:
        raise InstanceError("; ".join(problems))
    program = program or HolisticProgram(inst)
    delta = default_delta(inst, config)
    for _ in range(config.max_tightenings + 1):
        run = _synthesize_at(inst, config, R, delta, program, welfare_oracle)
        cert = run.certificate
        if not run.feasible or cert is None or cert.passed:
            return run
        logger.info(
            "R=%.6g: BIC %.4g, value %.6g fail certification at delta=%.4g",
            R, cert.bic_violation, cert.value, delta,
        )
        delta /= 2
    return SynthesisRun(InfeasibleAt(R, None, "certificate"), run.params, run.log, run.residual, cert)


def _synthesize_at(
    inst: Instance,
    config: SynthesisConfig,
    R: float,
    delta: float,
    program: HolisticProgram,
    welfare_oracle: Optional[WelfareOracle],
) -> SynthesisRun:
    system = ConstraintSystem.build(inst, R, delta, config.approximation)
    params = resolve_params(inst, config, system)
    logger.debug(
        "synthesize R=%.6g: %d rows, rho=%.4g, K=%d, %s scenarios",
        R, system.r, system.rho, params.rounds, "exact" if params.exact else params.samples,
    )

    attempts = 2 if config.retry_infeasible and not params.exact else 1
    for attempt in range(attempts):
        run = _run_once(inst, config, system, params, program, welfare_oracle, attempt)
        if run.feasible or attempt + 1 == attempts:
            return run
        logger.info("R=%.6g infeasible (%s), retrying with fresh samples", R, run.result.reason)
    return run


def _run_once(
    inst: Instance,
    config: SynthesisConfig,
    system: ConstraintSystem,
    params: SynthesisParams,
    program: HolisticProgram,
    welfare_oracle: Optional[WelfareOracle],
    attempt: int,
) -> SynthesisRun:
    log: list[RoundLog] = []
    cumulative = np.zeros(system.r)
    exact_rc = build_round_constraints(system, RoundSample.exact(inst)) if params.exact else None

    def supplier(ell: int) -> RoundConstraints:
        if exact_rc is not None:
            return exact_rc
        return build_round_constraints(system, draw_round_sample(inst, params, config.seed, ell, attempt))

    def on_round(ell: int, M: np.ndarray, c_value: float, yb: float) -> None:
        cumulative[:] += M
        worst = max(0.0, -float((cumulative / (ell + 1)).min(initial=0.0)))
        log.append(RoundLog(ell, worst, c_value, yb))

    executor = ThreadPoolExecutor(max_workers=config.threads) if config.threads > 1 else None
    try:
        transcript = run_generalized_ahk(
            system.r,
            system.rho,
            params.eps_mwu,
            params.rounds,
            supplier,
            lambda rc, y: combined_oracle(system, rc, y, program, welfare_oracle=welfare_oracle, executor=executor),
            normalize=config.normalize,
            early_stop=params.residual_target if config.early_stop else None,
            on_round=on_round,
        )
    finally:
        if executor is not None:
            executor.shutdown()

    R = system.R
    if transcript.status is TerminationStatus.DECLARED_INFEASIBLE:
        reason = "lp" if transcript.c_values[-1] == -math.inf else "oracle"
        return SynthesisRun(InfeasibleAt(R, transcript.infeasible_round, reason), params, log)

    avg = average_violation(transcript)
    residual = max(0.0, -float(avg.min(initial=0.0)))
    converged = residual <= params.residual_target * (1 + 1e-9)
    certifying = config.certify and params.exact
    if not converged:
        logger.info("R=%.6g: residual %.4g above target %.4g after %d rounds", R, residual, params.residual_target, len(transcript))
        if not certifying:
            return SynthesisRun(InfeasibleAt(R, None, "residual"), params, log, residual)

    snapshots = tuple(sol.snapshot for sol in transcript.solutions)
    holistic = {
        name: np.mean([sol.holistic.tables[name] for sol in transcript.solutions], axis=0)
        for name in transcript.solutions[0].holistic.tables
    }
    mech = Mechanism(
        setting=inst.setting,
        snapshots=snapshots,
        R=float(R),
        fingerprint=inst.fingerprint,
        n=inst.n,
        T=inst.T,
        m=inst.m,
        correlated=inst.correlated,
        inequality_mode=inst.inequality_mode,
        approximation=config.approximation,
        holistic=holistic,
        config={**config.model_dump(mode="json"), "resolved": params.to_dict()},
    )
    if inst.private_budgets:
        mech = wrap_private_budgets(mech, inst, params.eta)
    if inst.inequality_mode:
        try:
            mech = apply_scaling_fix(mech, inst, _realized_allocation(mech, inst, params, config.seed))
        except DegenerateRatio:
            if converged:
                raise
            return SynthesisRun(InfeasibleAt(R, None, "residual"), params, log, residual)
    certificate = _certify(mech, inst, config, welfare_oracle) if certifying else None
    if not converged and (certificate is None or not certificate.passed):
        return SynthesisRun(InfeasibleAt(R, None, "residual"), params, log, residual, certificate)
    return SynthesisRun(mech, params, log, residual, certificate)


def _certify(
    mech: Mechanism,
    inst: Instance,
    config: SynthesisConfig,
    welfare_oracle: Optional[WelfareOracle],
) -> Optional["Certificate"]:
    from mechsynth.verify import certify_mechanism

    try:
        return certify_mechanism(mech, inst, config.epsilon, welfare_oracle=welfare_oracle)
    except CapExceeded:
        logger.warning("support too large to certify; mechanism left uncertified")
        return None


def _realized_allocation(mech: Mechanism, inst: Instance, params: SynthesisParams, seed: int) -> np.ndarray:
    from mechsynth.verify import exact_interim, mc_interim

    try:
        return exact_interim(mech, inst)["X"]
    except CapExceeded:
        return mc_interim(mech, inst, max(params.samples, 10_000), seed)["X"]


def revenue_upper_bound(inst: Instance) -> float:
    if has_action_objective(inst):
        return action_range(inst)[1]
    return float(inst.n * inst.L)


def binary_search_revenue(
    inst: Instance,
    config: SynthesisConfig,
    *,
    hi: Optional[float] = None,
    welfare_oracle: Optional[WelfareOracle] = None,
) -> tuple[Mechanism, float]:
    """Largest target (to within ε/2) at which synthesis succeeds, with its mechanism."""
    program = HolisticProgram(inst)
    run = synthesize(inst, config, 0.0, program=program, welfare_oracle=welfare_oracle)
    if not run.feasible:
        raise SynthesisError(f"synthesis fails even at R=0 ({run.result.reason})")
    best: Mechanism = run.result
    lo = 0.0
    hi = revenue_upper_bound(inst) if hi is None else hi
    while hi - lo > config.epsilon / 2:
        mid = (lo + hi) / 2
        run = synthesize(inst, config, mid, program=program, welfare_oracle=welfare_oracle)
        logger.info("bisect R=%.6g: %s", mid, "feasible" if run.feasible else f"infeasible ({run.result.reason})")
        if run.feasible:
            lo, best = mid, run.result
        else:
            hi = mid
    return best, lo


def apply_scaling_fix(mechanism: Mechanism, inst: Instance, realized: np.ndarray) -> Mechanism:
    """Thin allocations so that the interim allocation equals X / c exactly.

    ``realized[i, t, j]`` is the interim allocation of the unscaled
    mechanism; each allocated item is kept with probability
    min(1, (X/c) / realized).  Cells the unscaled mechanism falls short on
    (by at most δ/c) have their target lowered to the realized allocation,
    so the stored X/c is exactly what the fixed mechanism allocates.
    """
    if not mechanism.inequality_mode:
        raise SynthesisError("scaling fix applies to inequality-mode mechanisms only")
    target = mechanism.holistic["X"] / mechanism.approximation
    delta = float(mechanism.config.get("resolved", {}).get("delta", 0.0))
    factors = np.ones_like(target)
    for i in range(inst.n):
        for t in range(inst.n_types[i]):
            for j in range(inst.m):
                want, got = float(target[i, t, j]), float(realized[i, t, j])
                if got > 0:
                    factors[i, t, j] = min(1.0, want / got)
                elif want > delta:
                    raise DegenerateRatio(
                        f"buyer {i} type {inst.type_labels[i][t]!r} never receives item {j} "
                        f"but its target is {want:.6g}"
                    )
    reached = {**mechanism.holistic, "X": mechanism.approximation * np.minimum(target, realized)}
    return dataclasses.replace(mechanism, scaling=factors, holistic=reached)


def wrap_private_budgets(mechanism: Mechanism, inst: Instance, eta: float) -> Mechanism:
    """With probability η every unit goes to buyer 0 for free; otherwise run the base mechanism."""
    if not 0.0 <= eta <= 1.0:
        raise SynthesisError(f"eta must lie in [0, 1], got {eta}")
    return dataclasses.replace(mechanism, private_budgets=True, eta=float(eta))
