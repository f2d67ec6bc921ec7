"""
Auction instances and type priors.

An instance file is a JSON document (see docs/instance-format.md) parsed into
``InstanceDoc`` by pydantic.  ``Instance.from_document`` turns it into the
dense, immutable form every other module works with: type labels become
indices, per-buyer tables are padded to ``T = max_i |T_i|`` and stored as
numpy arrays.

Semantic checks (pmf sums, the 1/L marginal floor, bounded magnitudes, ...)
are *not* raised here; ``validate_instance`` returns them as a list so the
CLI can print every problem at once.  Only structural problems (ragged
tables, unknown type labels) raise ``InstanceError``.
"""

from __future__ import annotations

import hashlib
import itertools
import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Annotated, Iterator, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, Field

from mechsynth.errors import CapExceeded, MechsynthError

logger = logging.getLogger(__name__)

TypeVector = tuple[int, ...]

DEFAULT_JOINT_CAP = 1_000_000
PMF_TOL = 1e-12
DERIVED_TOL = 1e-9


class InstanceError(MechsynthError):
    """Structurally malformed instance (cannot be turned into dense tables)."""


class ZeroConditional(MechsynthError):
    """A conditional probability used as a denominator is zero."""


class Setting(str, Enum):
    MULTI_UNIT = "multi_unit"
    QUITTING_RIGHTS = "quitting_rights"
    SOFT_BUDGET = "soft_budget"
    SELLER_UTILITY = "seller_utility"
    MULTI_ITEM = "multi_item"
    PROCUREMENT = "procurement"

    @property
    def is_unit_family(self) -> bool:
        """Settings whose allocation is a unit count q_i per buyer."""
        return self in (
            Setting.MULTI_UNIT,
            Setting.QUITTING_RIGHTS,
            Setting.SOFT_BUDGET,
            Setting.SELLER_UTILITY,
        )


# ── File documents ───────────────────────────────────────────────────────


class IndependentPriorDoc(BaseModel):
    kind: Literal["independent"] = "independent"
    pmfs: list[list[float]]


class JointEntryDoc(BaseModel):
    types: list[str]
    prob: float


class JointPriorDoc(BaseModel):
    kind: Literal["joint"] = "joint"
    entries: list[JointEntryDoc]


PriorDoc = Annotated[Union[IndependentPriorDoc, JointPriorDoc], Field(discriminator="kind")]


class SoftCostDoc(BaseModel):
    """Piecewise-linear borrowing cost: c(0)=0, ``slopes[k]`` on the k-th piece."""

    breakpoints: list[float] = Field(default_factory=list)
    slopes: list[float] = Field(default_factory=lambda: [1.0])


class PolytopeRowDoc(BaseModel):
    """Extra linear row over one scenario's (x, p) for the multi-item setting."""

    x: list[list[float]]
    p: list[float]
    rel: Literal["<=", ">=", "=="]
    rhs: float


class InstanceDoc(BaseModel):
    name: str = ""
    setting: Setting
    n: int = Field(ge=1)
    m: int = Field(ge=0)
    L: float = Field(gt=0)
    type_spaces: list[list[str]]
    prior: PriorDoc
    valuations: Optional[list[list[list[float]]]] = None
    budgets: Optional[list[Optional[float]]] = None
    private_budgets: Optional[list[list[float]]] = None
    soft_cost: Optional[list[SoftCostDoc]] = None
    seller_utility: Optional[dict[int, float]] = None
    seller_utility_interpolate: bool = False
    buyer_utility_table: Optional[list[list[list[list[float]]]]] = None
    procurement_costs: Optional[list[list[float]]] = None
    procurement_values: Optional[list[float]] = None
    procurement_budget: Optional[float] = None
    item_supply: Optional[list[float]] = None
    polytope_rows: list[PolytopeRowDoc] = Field(default_factory=list)
    envy_free: bool = False
    inequality_mode: bool = False
    correlated: Optional[bool] = None


# ── Priors ───────────────────────────────────────────────────────────────


class Prior(ABC):
    """A distribution over joint type vectors."""

    n_types: tuple[int, ...]

    @property
    def n(self) -> int:
        return len(self.n_types)

    @property
    def product_size(self) -> int:
        return math.prod(self.n_types)

    @abstractmethod
    def marginal(self, i: int) -> np.ndarray: ...

    @abstractmethod
    def prob(self, tvec: TypeVector) -> float: ...

    @abstractmethod
    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Draw ``size`` type vectors as an integer array of shape (size, n)."""

    @abstractmethod
    def _support(self) -> Iterator[tuple[TypeVector, float]]: ...

    def enumerate(self, cap: int = DEFAULT_JOINT_CAP) -> Iterator[tuple[TypeVector, float]]:
        """Every type vector with positive probability, in lexicographic order."""
        if self.support_size > cap:
            raise CapExceeded("joint type space", self.support_size, cap)
        return self._support()

    @property
    @abstractmethod
    def support_size(self) -> int: ...

    def support_arrays(self, cap: int = DEFAULT_JOINT_CAP) -> tuple[np.ndarray, np.ndarray]:
        entries = list(self.enumerate(cap))
        vectors = np.array([t for t, _ in entries], dtype=np.int64).reshape(len(entries), self.n)
        probs = np.array([p for _, p in entries], dtype=np.float64)
        return vectors, probs

    def conditional_ratio(self, i: int, t: int, t_prime: int, t_minus: TypeVector) -> float:
        """z = μ(t | t_{-i}) / μ(t' | t_{-i}); ``t_minus`` omits buyer i."""
        num = self.prob(_insert(t_minus, i, t))
        den = self.prob(_insert(t_minus, i, t_prime))
        if den <= 0.0:
            raise ZeroConditional(
                f"μ(t'={t_prime} | t_-{i}={t_minus}) is zero for buyer {i}"
            )
        return num / den

    def conditional_of_others(self, i: int, t: int) -> Iterator[tuple[TypeVector, float]]:
        """Yield (t_{-i}, μ(t_{-i} | t_i = t)) over vectors with positive mass."""
        f = float(self.marginal(i)[t])
        if f <= 0.0:
            return
        for tvec, p in self._support():
            if tvec[i] == t:
                yield tvec[:i] + tvec[i + 1:], p / f


def _insert(t_minus: TypeVector, i: int, t: int) -> TypeVector:
    return tuple(t_minus[:i]) + (t,) + tuple(t_minus[i:])


class IndependentPrior(Prior):
    def __init__(self, pmfs: list[np.ndarray]):
        self.pmfs = tuple(np.asarray(p, dtype=np.float64) for p in pmfs)
        self.n_types = tuple(len(p) for p in self.pmfs)

    def marginal(self, i: int) -> np.ndarray:
        return self.pmfs[i]

    def prob(self, tvec: TypeVector) -> float:
        return float(math.prod(self.pmfs[i][t] for i, t in enumerate(tvec)))

    @property
    def support_size(self) -> int:
        return math.prod(int(np.count_nonzero(p > 0)) for p in self.pmfs)

    def _support(self) -> Iterator[tuple[TypeVector, float]]:
        ranges = [[t for t in range(len(p)) if p[t] > 0] for p in self.pmfs]
        for tvec in itertools.product(*ranges):
            yield tuple(int(t) for t in tvec), self.prob(tvec)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        out = np.empty((size, self.n), dtype=np.int64)
        for i, pmf in enumerate(self.pmfs):
            out[:, i] = rng.choice(len(pmf), size=size, p=pmf / pmf.sum())
        return out

    def conditional_ratio(self, i: int, t: int, t_prime: int, t_minus: TypeVector) -> float:
        den = float(self.pmfs[i][t_prime])
        if den <= 0.0:
            raise ZeroConditional(f"f_{i}({t_prime}) is zero")
        return float(self.pmfs[i][t]) / den


class JointPrior(Prior):
    """Sparse explicit pmf over joint type vectors (only μ > 0 stored)."""

    def __init__(self, n_types: tuple[int, ...], entries: dict[TypeVector, float], negative_mass: float = 0.0):
        self.n_types = tuple(n_types)
        self.negative_mass = negative_mass
        self.entries = {k: v for k, v in sorted(entries.items()) if v > 0.0}
        self._vectors = np.array(list(self.entries), dtype=np.int64).reshape(-1, len(n_types))
        self._probs = np.array(list(self.entries.values()), dtype=np.float64)
        self._marginals = []
        for i, k in enumerate(self.n_types):
            f = np.zeros(k)
            np.add.at(f, self._vectors[:, i], self._probs)
            self._marginals.append(f)

    def marginal(self, i: int) -> np.ndarray:
        return self._marginals[i]

    def prob(self, tvec: TypeVector) -> float:
        return self.entries.get(tuple(tvec), 0.0)

    @property
    def support_size(self) -> int:
        return len(self.entries)

    def _support(self) -> Iterator[tuple[TypeVector, float]]:
        for tvec, p in self.entries.items():
            yield tvec, p

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        idx = rng.choice(len(self._probs), size=size, p=self._probs / self._probs.sum())
        return self._vectors[idx]

    @property
    def total_mass(self) -> float:
        return float(self._probs.sum())


def sample_type_vector(prior: Prior, rng: np.random.Generator) -> TypeVector:
    return tuple(int(t) for t in prior.sample(rng, 1)[0])


def enumerate_joint_types(prior: Prior, cap: int = DEFAULT_JOINT_CAP) -> Iterator[tuple[TypeVector, float]]:
    return prior.enumerate(cap)


def conditional_ratio(prior: Prior, i: int, t: int, t_prime: int, t_minus: TypeVector) -> float:
    return prior.conditional_ratio(i, t, t_prime, t_minus)


# ── Soft budgets ─────────────────────────────────────────────────────────


@dataclass(frozen=True, eq=False)
class SoftCost:
    """c(p): continuous, c(0)=0, slope ``slopes[k]`` between consecutive knots."""

    breakpoints: np.ndarray
    slopes: np.ndarray

    @property
    def knots(self) -> np.ndarray:
        return np.concatenate(([0.0], self.breakpoints))

    def _knot_values(self) -> np.ndarray:
        knots = self.knots
        widths = np.diff(knots)
        return np.concatenate(([0.0], np.cumsum(widths * self.slopes[: len(widths)])))

    def __call__(self, p: float) -> float:
        knots = self.knots
        k = int(np.searchsorted(knots, p, side="right")) - 1
        k = max(k, 0)
        return float(self._knot_values()[k] + self.slopes[k] * (p - knots[k]))

    def inverse(self, y: float) -> float:
        """Largest p ≥ 0 with c(p) ≤ y, or -inf when y < 0."""
        if y < 0:
            return -math.inf
        knots = self.knots
        values = self._knot_values()
        k = int(np.searchsorted(values, y, side="right")) - 1
        p = float(knots[k] + (y - values[k]) / self.slopes[k])
        # rounding must never push c(p) above y
        while p > 0.0 and self(p) > y:
            p = float(np.nextafter(p, 0.0))
        return p


# ── Instance ─────────────────────────────────────────────────────────────


@dataclass(frozen=True, eq=False)
class Instance:
    name: str
    setting: Setting
    n: int
    m: int
    L: float
    type_labels: tuple[tuple[str, ...], ...]
    prior: Prior
    values: Optional[np.ndarray]
    budgets: np.ndarray
    private_budgets: bool
    soft_costs: Optional[tuple[SoftCost, ...]]
    seller_table: Optional[np.ndarray]
    seller_utility_interpolate: bool
    buyer_utility: Optional[np.ndarray]
    costs: Optional[np.ndarray]
    procurement_values: Optional[np.ndarray]
    procurement_budget: Optional[float]
    supply: Optional[np.ndarray]
    polytope_rows: tuple[PolytopeRowDoc, ...]
    envy_free: bool
    inequality_mode: bool
    correlated: bool
    fingerprint: str
    document: InstanceDoc

    # ── construction ──

    @classmethod
    def from_document(cls, doc: InstanceDoc) -> "Instance":
        n, m = doc.n, doc.m
        if len(doc.type_spaces) != n:
            raise InstanceError(f"type_spaces lists {len(doc.type_spaces)} buyers, n={n}")
        labels = tuple(tuple(ts) for ts in doc.type_spaces)
        if any(len(ts) == 0 for ts in labels):
            raise InstanceError("every buyer needs at least one type")
        n_types = tuple(len(ts) for ts in labels)
        T = max(n_types)

        prior = _build_prior(doc.prior, labels)
        values = _build_values(doc, n_types, T)
        budgets = _build_budgets(doc, n_types, T)

        soft_costs = None
        if doc.soft_cost is not None:
            if len(doc.soft_cost) != n:
                raise InstanceError("soft_cost needs one entry per buyer")
            soft_costs = tuple(
                SoftCost(np.asarray(c.breakpoints, dtype=np.float64), np.asarray(c.slopes, dtype=np.float64))
                for c in doc.soft_cost
            )

        seller_table = None
        if doc.setting is Setting.SELLER_UTILITY:
            seller_table = _build_seller_table(doc)

        buyer_utility = None
        if doc.buyer_utility_table is not None:
            buyer_utility = np.zeros((n, T, 2 * int(doc.L) + 1, m + 1))
            for i, per_type in enumerate(doc.buyer_utility_table):
                for t, table in enumerate(per_type):
                    arr = np.asarray(table, dtype=np.float64)
                    if arr.shape != buyer_utility.shape[2:]:
                        raise InstanceError(
                            f"buyer_utility_table[{i}][{t}] has shape {arr.shape}, "
                            f"expected {buyer_utility.shape[2:]}"
                        )
                    buyer_utility[i, t] = arr

        costs = proc_values = None
        if doc.procurement_costs is not None:
            costs = _pad(doc.procurement_costs, n_types, T, "procurement_costs")
        if doc.procurement_values is not None:
            if len(doc.procurement_values) != n:
                raise InstanceError("procurement_values needs one value per agent")
            proc_values = np.asarray(doc.procurement_values, dtype=np.float64)

        supply = None
        if doc.setting is Setting.MULTI_ITEM:
            supply = np.ones(m) if doc.item_supply is None else np.asarray(doc.item_supply, dtype=np.float64)
            if supply.shape != (m,):
                raise InstanceError("item_supply needs one entry per item")
            for k, row in enumerate(doc.polytope_rows):
                if np.asarray(row.x).shape != (n, m) or len(row.p) != n:
                    raise InstanceError(f"polytope row {k} does not match (n, m)")

        correlated = doc.correlated
        if correlated is None:
            correlated = isinstance(prior, JointPrior) and doc.setting is Setting.MULTI_UNIT

        return cls(
            name=doc.name,
            setting=doc.setting,
            n=n,
            m=m,
            L=float(doc.L),
            type_labels=labels,
            prior=prior,
            values=values,
            budgets=budgets,
            private_budgets=doc.private_budgets is not None,
            soft_costs=soft_costs,
            seller_table=seller_table,
            seller_utility_interpolate=doc.seller_utility_interpolate,
            buyer_utility=buyer_utility,
            costs=costs,
            procurement_values=proc_values,
            procurement_budget=doc.procurement_budget,
            supply=supply,
            polytope_rows=tuple(doc.polytope_rows),
            envy_free=doc.envy_free,
            inequality_mode=doc.inequality_mode,
            correlated=bool(correlated),
            fingerprint=hashlib.sha256(doc.model_dump_json().encode()).hexdigest(),
            document=doc,
        )

    # ── shape helpers ──

    @property
    def n_types(self) -> tuple[int, ...]:
        return self.prior.n_types

    @property
    def T(self) -> int:
        return max(self.n_types)

    @property
    def L_int(self) -> int:
        return int(round(self.L))

    def marginal(self, i: int) -> np.ndarray:
        return self.prior.marginal(i)

    def type_index(self, i: int, label: str) -> int:
        try:
            return self.type_labels[i].index(label)
        except ValueError:
            raise InstanceError(f"buyer {i} has no type {label!r}") from None

    def parse_types(self, labels: list[str]) -> TypeVector:
        if len(labels) != self.n:
            raise InstanceError(f"expected {self.n} reported types, got {len(labels)}")
        return tuple(self.type_index(i, lab) for i, lab in enumerate(labels))

    # ── valuations, budgets, costs ──

    def value(self, i: int, q: int, t: int) -> float:
        return float(self.values[i, t, q])

    def budget(self, i: int, t: int) -> float:
        return float(self.budgets[i, t])

    def payment_cap(self, i: int, t: int) -> float:
        """min(B_i(t), L): the box bound of holistic payment variables."""
        return min(self.budget(i, t), self.L)

    def soft_cost(self, i: int, p: float) -> float:
        if self.soft_costs is None:
            return p
        return self.soft_costs[i](p)

    def soft_cost_inverse(self, i: int, y: float) -> float:
        if self.soft_costs is None:
            return y if y >= 0 else -math.inf
        return self.soft_costs[i].inverse(y)

    def max_soft_cost(self, i: int) -> float:
        return self.soft_cost(i, self.L)

    # ── seller-utility setting ──

    @property
    def payment_grid(self) -> np.ndarray:
        """Integer payments -L..L of the seller-utility setting."""
        return np.arange(-self.L_int, self.L_int + 1)

    def buyer_utility_at(self, i: int, p: int, q: int, t: int) -> float:
        if self.buyer_utility is not None:
            return float(self.buyer_utility[i, t, p + self.L_int, q])
        return float(self.values[i, t, q]) - p

    def seller_utility_at(self, z: int) -> float:
        offset = self.n * self.L_int
        if not -offset <= z <= offset:
            raise InstanceError(f"revenue {z} outside [-nL, nL]")
        u = self.seller_table[z + offset]
        if math.isnan(u):
            raise InstanceError(f"seller utility undefined at revenue {z}")
        return float(u)

    # ── procurement ──

    def cost(self, i: int, t: int) -> int:
        return int(round(self.costs[i, t]))

    @property
    def procurement_budget_int(self) -> int:
        return int(round(self.procurement_budget or 0))


def _pad(rows: list[list[float]], n_types: tuple[int, ...], T: int, what: str) -> np.ndarray:
    if len(rows) != len(n_types):
        raise InstanceError(f"{what} needs one row per buyer")
    out = np.zeros((len(n_types), T))
    for i, row in enumerate(rows):
        if len(row) != n_types[i]:
            raise InstanceError(f"{what}[{i}] has {len(row)} entries for {n_types[i]} types")
        out[i, : n_types[i]] = row
    return out


def _build_prior(doc: PriorDoc, labels: tuple[tuple[str, ...], ...]) -> Prior:
    if isinstance(doc, IndependentPriorDoc):
        if len(doc.pmfs) != len(labels):
            raise InstanceError("prior.pmfs needs one pmf per buyer")
        for i, pmf in enumerate(doc.pmfs):
            if len(pmf) != len(labels[i]):
                raise InstanceError(f"prior.pmfs[{i}] has {len(pmf)} entries for {len(labels[i])} types")
        return IndependentPrior([np.asarray(p, dtype=np.float64) for p in doc.pmfs])
    entries: dict[TypeVector, float] = {}
    negative = 0.0
    for e in doc.entries:
        if len(e.types) != len(labels):
            raise InstanceError(f"joint entry {e.types} has wrong length")
        try:
            key = tuple(labels[i].index(lab) for i, lab in enumerate(e.types))
        except ValueError:
            raise InstanceError(f"joint entry {e.types} names an unknown type") from None
        if e.prob < 0:
            negative += e.prob
        entries[key] = entries.get(key, 0.0) + e.prob
    return JointPrior(tuple(len(ts) for ts in labels), entries, negative_mass=negative)


def _build_values(doc: InstanceDoc, n_types: tuple[int, ...], T: int) -> Optional[np.ndarray]:
    if doc.valuations is None:
        return None
    width = doc.m if doc.setting is Setting.MULTI_ITEM else doc.m + 1
    if len(doc.valuations) != doc.n:
        raise InstanceError("valuations needs one table per buyer")
    out = np.zeros((doc.n, T, width))
    for i, per_type in enumerate(doc.valuations):
        if len(per_type) != n_types[i]:
            raise InstanceError(f"valuations[{i}] has {len(per_type)} rows for {n_types[i]} types")
        for t, row in enumerate(per_type):
            if len(row) != width:
                raise InstanceError(f"valuations[{i}][{t}] has {len(row)} entries, expected {width}")
            out[i, t] = row
    return out


def _build_budgets(doc: InstanceDoc, n_types: tuple[int, ...], T: int) -> np.ndarray:
    if doc.private_budgets is not None:
        return _pad(doc.private_budgets, n_types, T, "private_budgets")
    out = np.full((doc.n, T), float(doc.L))
    if doc.budgets is not None:
        if len(doc.budgets) != doc.n:
            raise InstanceError("budgets needs one entry per buyer")
        for i, b in enumerate(doc.budgets):
            if b is not None:
                out[i, :] = b
    return out


def _build_seller_table(doc: InstanceDoc) -> np.ndarray:
    span = doc.n * int(round(doc.L))
    table = np.full(2 * span + 1, np.nan)
    given = doc.seller_utility if doc.seller_utility is not None else {z: float(z) for z in range(-span, span + 1)}
    for z, u in given.items():
        if -span <= z <= span:
            table[z + span] = u
    if doc.seller_utility_interpolate:
        known = np.flatnonzero(~np.isnan(table))
        if len(known) >= 2:
            inside = np.arange(known[0], known[-1] + 1)
            table[inside] = np.interp(inside, known, table[known])
    return table


def load_instance(path: str | Path) -> Instance:
    doc = InstanceDoc.model_validate_json(Path(path).read_text())
    return Instance.from_document(doc)


# ── Validation ───────────────────────────────────────────────────────────


def validate_instance(inst: Instance) -> list[str]:
    """Every violated modelling assumption, as human-readable strings."""
    problems: list[str] = []
    L = inst.L
    problems += _validate_prior(inst)

    needs_values = inst.setting in (
        Setting.MULTI_UNIT, Setting.QUITTING_RIGHTS, Setting.SOFT_BUDGET, Setting.MULTI_ITEM
    )
    if needs_values:
        if inst.values is None:
            problems.append(f"valuations: required for setting {inst.setting.value}")
    if inst.values is not None:
        for i in range(inst.n):
            for t in range(inst.n_types[i]):
                row = inst.values[i, t]
                label = inst.type_labels[i][t]
                if np.any(row < 0):
                    problems.append(f"valuations: buyer {i} type {label!r} has a negative value")
                if np.any(np.abs(row) > L + PMF_TOL):
                    problems.append(f"valuations: buyer {i} type {label!r} exceeds L={L:g}")
                if inst.setting is not Setting.MULTI_ITEM and row[0] != 0:
                    problems.append(f"valuations: buyer {i} type {label!r} has v(0) != 0")

    for i in range(inst.n):
        for t in range(inst.n_types[i]):
            b = inst.budgets[i, t]
            if b < 0 or b > L + PMF_TOL:
                problems.append(f"budgets: buyer {i} budget {b:g} outside [0, L={L:g}]")
                break

    if inst.private_budgets and inst.setting is not Setting.MULTI_UNIT:
        problems.append("budgets: private budgets are only supported in the multi_unit setting")

    if inst.setting is Setting.SOFT_BUDGET:
        problems += _validate_soft(inst)
    if inst.setting is Setting.SELLER_UTILITY:
        problems += _validate_seller(inst)
    if inst.setting is Setting.PROCUREMENT:
        problems += _validate_procurement(inst)
    if inst.setting is Setting.MULTI_ITEM and inst.supply is not None and np.any(inst.supply <= 0):
        problems.append("item_supply: every item needs positive supply")

    if inst.inequality_mode and inst.setting is not Setting.MULTI_ITEM:
        problems.append("inequality_mode: only available for the multi_item setting")
    if inst.correlated:
        if inst.setting is not Setting.MULTI_UNIT:
            problems.append("correlated: only available for the multi_unit setting")
        if not isinstance(inst.prior, JointPrior):
            problems.append("correlated: requires an explicit joint prior")
        if inst.private_budgets:
            problems.append("correlated: cannot be combined with private budgets")
    return problems


def _validate_prior(inst: Instance) -> list[str]:
    problems = []
    L = inst.L
    prior = inst.prior
    if isinstance(prior, IndependentPrior):
        for i, pmf in enumerate(prior.pmfs):
            if np.any(pmf < 0):
                problems.append(f"prior: pmf of buyer {i} has a negative probability")
            s = float(pmf.sum())
            if abs(s - 1.0) > PMF_TOL:
                problems.append(f"prior: pmf of buyer {i} sums to {s:.12g}, not 1")
    else:
        if prior.negative_mass < 0:
            problems.append("prior: joint pmf has a negative probability")
        s = prior.total_mass
        if abs(s - 1.0) > PMF_TOL:
            problems.append(f"prior: joint pmf sums to {s:.12g}, not 1")
    for i in range(inst.n):
        f = prior.marginal(i)
        for t, ft in enumerate(f):
            if ft < 1.0 / L - PMF_TOL:
                problems.append(
                    f"prior: marginal f_{i}({inst.type_labels[i][t]!r}) = {ft:.6g} is below 1/L = {1.0 / L:.6g}"
                )
    return problems


def _validate_soft(inst: Instance) -> list[str]:
    if inst.soft_costs is None:
        return ["soft_cost: required for setting soft_budget"]
    problems = []
    for i, c in enumerate(inst.soft_costs):
        if len(c.slopes) != len(c.breakpoints) + 1:
            problems.append(f"soft_cost: buyer {i} needs len(slopes) == len(breakpoints) + 1")
            continue
        if np.any(np.diff(c.knots) <= 0):
            problems.append(f"soft_cost: buyer {i} breakpoints must be positive and increasing")
        if np.any(c.slopes < 1.0):
            problems.append(f"soft_cost: buyer {i} has slope < 1, so c(p) - p is not monotone")
    return problems


def _validate_seller(inst: Instance) -> list[str]:
    problems = []
    if abs(inst.L - inst.L_int) > 0:
        problems.append("seller_utility: L must be an integer so payments lie on the integer grid")
    table = inst.seller_table
    span = inst.n * inst.L_int
    if np.isnan(table[span]) or table[span] != 0:
        problems.append("seller_utility: U(0) must be 0")
    missing = np.flatnonzero(np.isnan(table))
    if len(missing):
        problems.append(
            f"seller_utility: {len(missing)} revenues in [-nL, nL] have no utility "
            "(set seller_utility_interpolate to fill gaps)"
        )
    known = table[~np.isnan(table)]
    if np.any(np.diff(known) < 0):
        problems.append("seller_utility: U must be monotone non-decreasing")
    if inst.buyer_utility is not None and np.any(np.abs(inst.buyer_utility) > inst.L + PMF_TOL):
        problems.append("buyer_utility_table: |u| exceeds L")
    if inst.buyer_utility is None and inst.values is None:
        problems.append("seller_utility: needs buyer_utility_table or valuations")
    return problems


def _validate_procurement(inst: Instance) -> list[str]:
    problems = []
    if inst.costs is None:
        problems.append("procurement_costs: required for setting procurement")
    else:
        for i in range(inst.n):
            c = inst.costs[i, : inst.n_types[i]]
            if np.any(c != np.round(c)) or np.any(c < 0) or np.any(c > inst.L):
                problems.append(f"procurement_costs: agent {i} costs must be integers in [0, L]")
    if inst.procurement_values is None:
        problems.append("procurement_values: required for setting procurement")
    elif np.any(inst.procurement_values < 0):
        problems.append("procurement_values: values must be non-negative")
    B = inst.procurement_budget
    if B is None:
        problems.append("procurement_budget: required for setting procurement")
    elif B != round(B) or B < 0 or B > inst.L:
        problems.append(f"procurement_budget: {B:g} must be an integer in [0, L]")
    return problems


# ── Width parameters ─────────────────────────────────────────────────────


@dataclass(frozen=True)
class WidthParams:
    l_effective: float
    z_max: float
    full_conditional_support: bool


def compute_width_params(inst: Instance) -> WidthParams:
    mags = [0.0]
    if inst.values is not None:
        mags.append(float(np.abs(inst.values).max(initial=0.0)))
    mags.append(float(np.abs(inst.budgets).max(initial=0.0)))
    if inst.buyer_utility is not None:
        mags.append(float(np.abs(inst.buyer_utility).max()))
    if inst.costs is not None:
        mags.append(float(np.abs(inst.costs).max()))
    if inst.procurement_budget is not None:
        mags.append(float(inst.procurement_budget))
    if inst.seller_table is not None:
        known = inst.seller_table[~np.isnan(inst.seller_table)]
        mags.append(float(np.abs(known).max(initial=0.0)))
    l_eff = max(mags)

    prior = inst.prior
    z_max = 1.0
    full = True
    if isinstance(prior, IndependentPrior):
        for pmf in prior.pmfs:
            pos = pmf[pmf > 0]
            z_max = max(z_max, float(pos.max() / pos.min()))
    else:
        for i in range(inst.n):
            groups: dict[TypeVector, list[float]] = {}
            for tvec, p in prior.enumerate():
                groups.setdefault(tvec[:i] + tvec[i + 1:], []).append(p)
            for probs in groups.values():
                if len(probs) < inst.n_types[i]:
                    full = False
                z_max = max(z_max, max(probs) / min(probs))
    return WidthParams(l_effective=l_eff, z_max=z_max, full_conditional_support=full)
