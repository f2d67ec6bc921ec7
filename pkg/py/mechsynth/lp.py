"""
Dense two-phase tableau simplex.

Problems here are small: the holistic LP solved once per round, the
multi-item per-scenario LP, and the brute-force optimum over action-grid
distributions on tiny instances.  Bland's rule is used for every pivot
(lowest-index entering column, lowest basic index on ratio ties), which
makes the solver cycle-free and bit-for-bit deterministic.

Variables with bounds are mapped to non-negative standard-form columns:

    lo finite        x = lo + s,  plus a row s <= hi - lo when hi is finite
    only hi finite   x = hi - s
    free             x = s+ - s-
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from mechsynth.errors import MechsynthError

logger = logging.getLogger(__name__)

PIVOT_TOL = 1e-9
FEAS_TOL = 1e-7
MAX_PIVOTS = 200_000


class LpError(MechsynthError):
    """Solver failure that is not a property of the problem (iteration limit)."""


class DimensionMismatch(LpError):
    """Row, objective and bound dimensions disagree."""


class Relation(str, Enum):
    LE = "<="
    EQ = "=="
    GE = ">="


class Sense(str, Enum):
    MIN = "min"
    MAX = "max"


class LpStatus(str, Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


@dataclass(frozen=True, eq=False)
class LinearProgram:
    objective: np.ndarray
    A: np.ndarray
    relations: tuple[Relation, ...]
    rhs: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    sense: Sense = Sense.MAX

    @property
    def n_vars(self) -> int:
        return len(self.objective)

    @property
    def n_rows(self) -> int:
        return len(self.relations)

    @classmethod
    def from_rows(
        cls,
        objective: Sequence[float],
        rows: Iterable[tuple[Sequence[float], Relation | str, float]],
        bounds: Optional[Sequence[tuple[float, float]]] = None,
        sense: Sense | str = Sense.MAX,
    ) -> "LinearProgram":
        c = np.asarray(objective, dtype=np.float64)
        d = len(c)
        rows = list(rows)
        A = np.zeros((len(rows), d))
        rels = []
        b = np.zeros(len(rows))
        for k, (coeffs, rel, rhs) in enumerate(rows):
            coeffs = np.asarray(coeffs, dtype=np.float64)
            if coeffs.shape != (d,):
                raise DimensionMismatch(f"row {k} has {coeffs.shape[0]} coefficients, objective has {d}")
            A[k] = coeffs
            rels.append(Relation(rel))
            b[k] = rhs
        if bounds is None:
            lower, upper = np.zeros(d), np.full(d, math.inf)
        else:
            if len(bounds) != d:
                raise DimensionMismatch(f"{len(bounds)} bounds for {d} variables")
            lower = np.array([lo for lo, _ in bounds], dtype=np.float64)
            upper = np.array([hi for _, hi in bounds], dtype=np.float64)
        return cls(c, A, tuple(rels), b, lower, upper, Sense(sense))

    def check_dimensions(self) -> None:
        d = self.n_vars
        if self.A.shape != (self.n_rows, d) or self.rhs.shape != (self.n_rows,):
            raise DimensionMismatch(f"constraint matrix {self.A.shape} does not match {self.n_rows} rows x {d} vars")
        if self.lower.shape != (d,) or self.upper.shape != (d,):
            raise DimensionMismatch("bounds do not match the number of variables")
        if np.any(self.lower > self.upper):
            raise DimensionMismatch("a variable has lower bound above its upper bound")


@dataclass
class LpSolution:
    status: LpStatus
    values: Optional[np.ndarray] = None
    objective_value: float = math.nan
    duals: Optional[np.ndarray] = None
    dual_objective: float = math.nan
    dual_feasible: bool = False
    pivots: int = 0

    @property
    def optimal(self) -> bool:
        return self.status is LpStatus.OPTIMAL


class LpBuilder:
    """Incremental construction of a LinearProgram with sparse rows."""

    def __init__(self) -> None:
        self._lower: list[float] = []
        self._upper: list[float] = []
        self._cost: list[float] = []
        self._rows: list[tuple[dict[int, float], Relation, float]] = []

    @property
    def n_vars(self) -> int:
        return len(self._cost)

    @property
    def n_rows(self) -> int:
        return len(self._rows)

    def add_var(self, lo: float = 0.0, hi: float = math.inf, cost: float = 0.0) -> int:
        self._lower.append(lo)
        self._upper.append(hi)
        self._cost.append(cost)
        return len(self._cost) - 1

    def add_vars(self, shape: tuple[int, ...], lo: float = 0.0, hi: float = math.inf) -> np.ndarray:
        count = math.prod(shape)
        start = self.n_vars
        for _ in range(count):
            self.add_var(lo, hi)
        return np.arange(start, start + count).reshape(shape)

    def set_bounds(self, var: int, lo: float, hi: float) -> None:
        self._lower[var] = lo
        self._upper[var] = hi

    def add_cost(self, var: int, c: float) -> None:
        self._cost[var] += c

    def add_row(self, terms: Mapping[int, float] | Iterable[tuple[int, float]], rel: Relation | str, rhs: float) -> None:
        acc: dict[int, float] = {}
        items = terms.items() if isinstance(terms, Mapping) else terms
        for var, coef in items:
            acc[int(var)] = acc.get(int(var), 0.0) + float(coef)
        self._rows.append((acc, Relation(rel), float(rhs)))

    def build(self, sense: Sense | str = Sense.MAX) -> LinearProgram:
        d = self.n_vars
        A = np.zeros((len(self._rows), d))
        for k, (terms, _, _) in enumerate(self._rows):
            for var, coef in terms.items():
                A[k, var] += coef
        return LinearProgram(
            objective=np.asarray(self._cost, dtype=np.float64),
            A=A,
            relations=tuple(rel for _, rel, _ in self._rows),
            rhs=np.array([rhs for _, _, rhs in self._rows], dtype=np.float64),
            lower=np.asarray(self._lower, dtype=np.float64),
            upper=np.asarray(self._upper, dtype=np.float64),
            sense=Sense(sense),
        )


# ── Standard form ────────────────────────────────────────────────────────


@dataclass
class _StandardForm:
    A: np.ndarray          # rows x cols, rhs made non-negative
    b: np.ndarray
    c: np.ndarray          # minimisation costs
    const: float           # objective constant from variable shifts
    M: np.ndarray          # x = offset + M @ s (first n_struct columns of s)
    offset: np.ndarray
    n_struct: int
    n_orig_rows: int
    flips: np.ndarray = field(default_factory=lambda: np.zeros(0))


def _standardize(lp: LinearProgram) -> _StandardForm:
    d = lp.n_vars
    cols: list[np.ndarray] = []
    offset = np.zeros(d)
    bound_rows: list[tuple[int, float]] = []
    for j in range(d):
        lo, hi = lp.lower[j], lp.upper[j]
        e = np.zeros(d)
        if math.isfinite(lo):
            offset[j] = lo
            e[j] = 1.0
            cols.append(e)
            if math.isfinite(hi):
                bound_rows.append((len(cols) - 1, hi - lo))
        elif math.isfinite(hi):
            offset[j] = hi
            e[j] = -1.0
            cols.append(e)
        else:
            e[j] = 1.0
            cols.append(e)
            cols.append(-e)
    M = np.column_stack(cols) if cols else np.zeros((d, 0))
    n_struct = M.shape[1]

    sign = 1.0 if lp.sense is Sense.MIN else -1.0
    c_struct = sign * (lp.objective @ M)
    const = sign * float(lp.objective @ offset)

    A_rows = lp.A @ M
    b_rows = lp.rhs - lp.A @ offset
    k = lp.n_rows
    n_bound = len(bound_rows)
    rels = list(lp.relations) + [Relation.LE] * n_bound
    total_rows = k + n_bound
    A_core = np.zeros((total_rows, n_struct))
    b = np.zeros(total_rows)
    A_core[:k] = A_rows
    b[:k] = b_rows
    for r, (col, width) in enumerate(bound_rows):
        A_core[k + r, col] = 1.0
        b[k + r] = width

    n_slack = sum(1 for rel in rels if rel is not Relation.EQ)
    S = np.zeros((total_rows, n_slack))
    s_idx = 0
    for r, rel in enumerate(rels):
        if rel is Relation.LE:
            S[r, s_idx] = 1.0
            s_idx += 1
        elif rel is Relation.GE:
            S[r, s_idx] = -1.0
            s_idx += 1
    A_std = np.hstack([A_core, S])
    flips = np.where(b < 0, -1.0, 1.0)
    A_std *= flips[:, None]
    b = b * flips
    c = np.concatenate([c_struct, np.zeros(n_slack)])
    return _StandardForm(A_std, b, c, const, M, offset, n_struct, k, flips)


# ── Tableau ──────────────────────────────────────────────────────────────


def _pivot(T: np.ndarray, r: int, c: int) -> None:
    T[r] /= T[r, c]
    col = T[:, c].copy()
    col[r] = 0.0
    T -= np.outer(col, T[r])


def _run_simplex(T: np.ndarray, basis: np.ndarray, n_allowed: int, budget: list[int]) -> LpStatus:
    """Minimise with Bland's rule; the last row holds reduced costs and -z."""
    rows = T.shape[0] - 1
    while True:
        reduced = T[-1, :n_allowed]
        entering = np.flatnonzero(reduced < -PIVOT_TOL)
        if len(entering) == 0:
            return LpStatus.OPTIMAL
        c = int(entering[0])
        col = T[:rows, c]
        pos = col > PIVOT_TOL
        if not pos.any():
            return LpStatus.UNBOUNDED
        ratios = np.full(rows, math.inf)
        ratios[pos] = T[:rows, -1][pos] / col[pos]
        best = ratios.min()
        ties = np.flatnonzero(ratios <= best + 1e-12 * (1.0 + abs(best)))
        r = int(ties[np.argmin(basis[ties])])
        _pivot(T, r, c)
        basis[r] = c
        budget[0] += 1
        if budget[0] > MAX_PIVOTS:
            raise LpError(f"simplex exceeded {MAX_PIVOTS} pivots")


def _phase_one(sf: _StandardForm, budget: list[int]) -> Optional[tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """Return (tableau without artificials, basis, kept rows) or None if infeasible."""
    R, N = sf.A.shape
    T = np.zeros((R + 1, N + R + 1))
    T[:R, :N] = sf.A
    T[:R, N:N + R] = np.eye(R)
    T[:R, -1] = sf.b
    T[-1, :N] = -sf.A.sum(axis=0)
    T[-1, -1] = -sf.b.sum()
    basis = np.arange(N, N + R)
    _run_simplex(T, basis, N + R, budget)
    if -T[-1, -1] > FEAS_TOL * max(1.0, float(np.abs(sf.b).max(initial=0.0))):
        return None
    keep = np.ones(R, dtype=bool)
    for r in range(R):
        if basis[r] < N:
            continue
        nz = np.flatnonzero(np.abs(T[r, :N]) > PIVOT_TOL)
        if len(nz):
            _pivot(T, r, int(nz[0]))
            basis[r] = int(nz[0])
        else:
            keep[r] = False
    kept = np.flatnonzero(keep)
    T2 = np.zeros((len(kept) + 1, N + 1))
    T2[:-1, :N] = T[kept, :N]
    T2[:-1, -1] = T[kept, -1]
    return T2, basis[kept].copy(), kept


def _set_objective(T: np.ndarray, basis: np.ndarray, c: np.ndarray) -> None:
    N = len(c)
    T[-1, :N] = c
    T[-1, -1] = 0.0
    for r, j in enumerate(basis):
        if c[j] != 0.0:
            T[-1] -= c[j] * T[r]


def solve_lp(lp: LinearProgram) -> LpSolution:
    lp.check_dimensions()
    sf = _standardize(lp)
    budget = [0]
    phase1 = _phase_one(sf, budget)
    if phase1 is None:
        return LpSolution(LpStatus.INFEASIBLE, pivots=budget[0])
    T, basis, kept = phase1
    N = sf.A.shape[1]
    _set_objective(T, basis, sf.c)
    status = _run_simplex(T, basis, N, budget)
    if status is LpStatus.UNBOUNDED:
        return LpSolution(LpStatus.UNBOUNDED, pivots=budget[0])

    s = np.zeros(N)
    s[basis] = T[:-1, -1]
    x = sf.offset + sf.M @ s[: sf.n_struct]
    x = np.clip(x, lp.lower, lp.upper)
    primal_min = float(sf.c @ s) + sf.const

    y_kept = np.zeros(len(kept))
    if len(kept):
        B = sf.A[np.ix_(kept, basis)]
        y_kept = np.linalg.solve(B.T, sf.c[basis])
    y = np.zeros(sf.A.shape[0])
    y[kept] = y_kept
    dual_min = float(sf.b @ y) + sf.const
    reduced = sf.c - sf.A.T @ y
    dual_feasible = bool(np.all(reduced >= -1e-7))

    sign = 1.0 if lp.sense is Sense.MIN else -1.0
    row_duals = sign * (y[: sf.n_orig_rows] * sf.flips[: sf.n_orig_rows])
    return LpSolution(
        status=LpStatus.OPTIMAL,
        values=x,
        objective_value=sign * primal_min,
        duals=row_duals,
        dual_objective=sign * dual_min,
        dual_feasible=dual_feasible,
        pivots=budget[0],
    )


@dataclass
class FeasibilityResult:
    feasible: bool
    witness: Optional[np.ndarray] = None


def check_feasible_lp(
    rows: Iterable[tuple[Sequence[float], Relation | str, float]],
    bounds: Sequence[tuple[float, float]],
) -> FeasibilityResult:
    lp = LinearProgram.from_rows(np.zeros(len(bounds)), rows, bounds, Sense.MIN)
    sol = solve_lp(lp)
    if sol.status is LpStatus.INFEASIBLE:
        return FeasibilityResult(False)
    return FeasibilityResult(True, sol.values)


def row_residuals(lp: LinearProgram, x: np.ndarray) -> np.ndarray:
    """Signed slack of each row at x (non-negative means satisfied)."""
    ax = lp.A @ x
    out = np.empty(lp.n_rows)
    for k, rel in enumerate(lp.relations):
        if rel is Relation.LE:
            out[k] = lp.rhs[k] - ax[k]
        elif rel is Relation.GE:
            out[k] = ax[k] - lp.rhs[k]
        else:
            out[k] = -abs(ax[k] - lp.rhs[k])
    return out


def solve_by_vertex_enumeration(lp: LinearProgram, max_subsets: int = 2_000_000) -> LpSolution:
    """Reference optimum of a bounded LP by trying every basic solution.

    Exponential; only meant for cross-checking on a handful of variables.
    """
    lp.check_dimensions()
    d = lp.n_vars
    hyper_A: list[np.ndarray] = []
    hyper_b: list[float] = []
    forced: list[int] = []
    for k in range(lp.n_rows):
        hyper_A.append(lp.A[k])
        hyper_b.append(lp.rhs[k])
        if lp.relations[k] is Relation.EQ:
            forced.append(k)
    for j in range(d):
        for bound in (lp.lower[j], lp.upper[j]):
            if math.isfinite(bound):
                e = np.zeros(d)
                e[j] = 1.0
                hyper_A.append(e)
                hyper_b.append(bound)
    H = np.array(hyper_A).reshape(-1, d)
    h = np.array(hyper_b)
    free = [k for k in range(len(h)) if k not in forced]
    need = d - len(forced)
    if need < 0 or math.comb(len(free), max(need, 0)) > max_subsets:
        raise LpError("vertex enumeration too large")
    sign = 1.0 if lp.sense is Sense.MAX else -1.0
    best_val, best_x = -math.inf, None
    for subset in itertools.combinations(free, need):
        idx = forced + list(subset)
        sub = H[idx]
        if d and abs(np.linalg.det(sub)) < 1e-12:
            continue
        x = np.linalg.solve(sub, h[idx]) if d else np.zeros(0)
        if np.any(x < lp.lower - FEAS_TOL) or np.any(x > lp.upper + FEAS_TOL):
            continue
        if np.any(row_residuals(lp, x) < -FEAS_TOL):
            continue
        val = sign * float(lp.objective @ x)
        if val > best_val + 1e-12:
            best_val, best_x = val, x
    if best_x is None:
        return LpSolution(LpStatus.INFEASIBLE)
    return LpSolution(LpStatus.OPTIMAL, values=best_x, objective_value=sign * best_val)
