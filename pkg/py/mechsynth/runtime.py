"""
Executing a stored mechanism, and its on-disk document.

An execution is: the private-budget giveaway coin (if the mechanism
carries one), a uniform snapshot ℓ, the setting oracle on the reported
types, then (inequality mode) one keep-coin per allocated item and the
all-pay charges P_i(t_i)/c.  Randomness comes from a Philox generator keyed
by (seed, execution id) so executions can be replayed one by one.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel, Field, ValidationError

from mechsynth.errors import MechsynthError
from mechsynth.model import Instance, Setting, TypeVector
from mechsynth.oracles import DualSnapshot, Outcome, WelfareOracle, solve_oracle
from mechsynth.synthesis import Mechanism

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


class ExecutionError(MechsynthError):
    """Base class for runtime errors."""


class SettingMismatch(ExecutionError):
    """The mechanism was synthesized for a different instance."""


class InvalidTypeVector(ExecutionError):
    """A reported type vector does not fit the instance."""


class DocumentError(MechsynthError):
    """Base class for mechanism-file errors."""


class VersionMismatch(DocumentError):
    def __init__(self, found: Any):
        super().__init__(f"mechanism file version {found!r}, this build reads version {FORMAT_VERSION}")
        self.found = found


class MalformedDocument(DocumentError):
    """The mechanism file cannot be parsed."""


def execution_rng(seed: int, exec_id: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, exec_id])))


# ── Execution ────────────────────────────────────────────────────────────


@dataclass(frozen=True, eq=False)
class ExecutionTrace:
    types: TypeVector
    round: Optional[int]
    outcome: Outcome
    giveaway: bool = False
    kept: Optional[np.ndarray] = None
    revenue: float = 0.0

    def to_dict(self) -> dict:
        return {
            "types": list(self.types),
            "round": self.round,
            "allocation": self.outcome.allocation.tolist(),
            "payments": self.outcome.payments.tolist(),
            "revenue": self.revenue,
            "giveaway": self.giveaway,
            "kept": None if self.kept is None else self.kept.astype(int).tolist(),
        }

    def to_json_line(self) -> str:
        return json.dumps(self.to_dict())


def check_mechanism(mechanism: Mechanism, inst: Instance) -> None:
    if mechanism.setting is not inst.setting:
        raise SettingMismatch(
            f"mechanism is for {mechanism.setting.value}, instance is {inst.setting.value}"
        )
    if mechanism.fingerprint != inst.fingerprint:
        raise SettingMismatch("mechanism was synthesized for a different instance (fingerprint differs)")


def check_types(inst: Instance, tvec: Sequence[int]) -> TypeVector:
    if len(tvec) != inst.n:
        raise InvalidTypeVector(f"expected {inst.n} types, got {len(tvec)}")
    out = tuple(int(t) for t in tvec)
    for i, t in enumerate(out):
        if not 0 <= t < inst.n_types[i]:
            raise InvalidTypeVector(f"buyer {i} has no type index {t}")
    return out


def giveaway_outcome(inst: Instance) -> Outcome:
    """All m units to buyer 0 at price 0."""
    q = np.zeros(inst.n, dtype=np.int64)
    q[0] = inst.m
    return Outcome(q, np.zeros(inst.n))


def all_pay_charges(mechanism: Mechanism, tvec: TypeVector) -> np.ndarray:
    P = mechanism.holistic["P"]
    return np.array([P[i, t] for i, t in enumerate(tvec)]) / mechanism.approximation


def keep_factors(mechanism: Mechanism, tvec: TypeVector) -> np.ndarray:
    """Per-item keep probabilities of each buyer; all ones before the scaling fix."""
    if mechanism.scaling is None:
        return np.ones((len(tvec), mechanism.m))
    return np.array([mechanism.scaling[i, t] for i, t in enumerate(tvec)])


def expected_outcome(mechanism: Mechanism, tvec: TypeVector, outcome: Outcome) -> Outcome:
    """Expectation over the keep-coins of an inequality-mode outcome (identity otherwise)."""
    if not mechanism.inequality_mode:
        return outcome
    return Outcome(outcome.allocation * keep_factors(mechanism, tvec), all_pay_charges(mechanism, tvec))


def execute(
    mechanism: Mechanism,
    inst: Instance,
    tvec: Sequence[int],
    rng: np.random.Generator,
    *,
    welfare_oracle: Optional[WelfareOracle] = None,
) -> ExecutionTrace:
    check_mechanism(mechanism, inst)
    tvec = check_types(inst, tvec)

    if mechanism.private_budgets and mechanism.eta > 0.0 and rng.random() < mechanism.eta:
        return ExecutionTrace(tvec, None, giveaway_outcome(inst), giveaway=True)

    ell = int(rng.integers(mechanism.K))
    outcome, _ = solve_oracle(mechanism.snapshots[ell], tvec, inst, welfare_oracle)

    if mechanism.inequality_mode:
        factors = keep_factors(mechanism, tvec)
        kept = rng.random(factors.shape) < factors
        alloc = np.where(kept, outcome.allocation, 0.0)
        charged = all_pay_charges(mechanism, tvec)
        final = Outcome(alloc, charged)
        return ExecutionTrace(tvec, ell, final, kept=kept, revenue=final.revenue)

    return ExecutionTrace(tvec, ell, outcome, revenue=outcome.revenue)


def execute_many(
    mechanism: Mechanism,
    inst: Instance,
    vectors: Iterable[Sequence[int]],
    seed: int,
    *,
    welfare_oracle: Optional[WelfareOracle] = None,
) -> list[ExecutionTrace]:
    return [
        execute(mechanism, inst, tvec, execution_rng(seed, k), welfare_oracle=welfare_oracle)
        for k, tvec in enumerate(vectors)
    ]


# ── Mechanism document ───────────────────────────────────────────────────


class SnapshotDoc(BaseModel):
    alpha: list[Any]
    beta: list[Any]
    gamma: float = Field(default=0.0, ge=0)


class MechanismDocument(BaseModel):
    version: int
    setting: Setting
    n: int = Field(ge=1)
    T: int = Field(ge=1)
    m: int = Field(ge=0)
    fingerprint: str
    R: float
    snapshots: list[SnapshotDoc] = Field(min_length=1)
    private_budgets: bool = False
    eta: float = Field(default=0.0, ge=0, le=1)
    correlated: bool = False
    inequality_mode: bool = False
    approximation: float = Field(default=1.0, ge=1)
    scaling: Optional[list[Any]] = None
    holistic: dict[str, list[Any]] = Field(default_factory=dict)
    config: dict[str, Any] = Field(default_factory=dict)


def to_document(mechanism: Mechanism) -> MechanismDocument:
    return MechanismDocument(
        version=FORMAT_VERSION,
        setting=mechanism.setting,
        n=mechanism.n,
        T=mechanism.T,
        m=mechanism.m,
        fingerprint=mechanism.fingerprint,
        R=mechanism.R,
        snapshots=[SnapshotDoc(**s.to_dict()) for s in mechanism.snapshots],
        private_budgets=mechanism.private_budgets,
        eta=mechanism.eta,
        correlated=mechanism.correlated,
        inequality_mode=mechanism.inequality_mode,
        approximation=mechanism.approximation,
        scaling=None if mechanism.scaling is None else mechanism.scaling.tolist(),
        holistic={k: v.tolist() for k, v in sorted(mechanism.holistic.items())},
        config=mechanism.config,
    )


def serialize(mechanism: Mechanism) -> str:
    return to_document(mechanism).model_dump_json(indent=1)


def _array(data: Any, what: str) -> np.ndarray:
    try:
        arr = np.asarray(data, dtype=np.float64)
    except (ValueError, TypeError) as exc:
        raise MalformedDocument(f"{what} is not a rectangular numeric array") from exc
    return arr


def from_document(doc: MechanismDocument) -> Mechanism:
    snapshots = []
    for k, s in enumerate(doc.snapshots):
        alpha = _array(s.alpha, f"snapshot {k} alpha")
        beta = _array(s.beta, f"snapshot {k} beta")
        if alpha.shape[:2] != (doc.n, doc.T) or beta.shape[:2] != (doc.n, doc.T):
            raise MalformedDocument(f"snapshot {k} does not match n={doc.n}, T={doc.T}")
        if snapshots and (alpha.shape != snapshots[0].alpha.shape or beta.shape != snapshots[0].beta.shape):
            raise MalformedDocument(f"snapshot {k} has a different shape from snapshot 0")
        snapshots.append(DualSnapshot(doc.setting, alpha, beta, s.gamma))
    scaling = None if doc.scaling is None else _array(doc.scaling, "scaling")
    if doc.inequality_mode and (scaling is None or "P" not in doc.holistic):
        raise MalformedDocument("inequality-mode mechanism lacks scaling factors or payment targets")
    try:
        return Mechanism(
            setting=doc.setting,
            snapshots=tuple(snapshots),
            R=doc.R,
            fingerprint=doc.fingerprint,
            n=doc.n,
            T=doc.T,
            m=doc.m,
            private_budgets=doc.private_budgets,
            eta=doc.eta,
            correlated=doc.correlated,
            inequality_mode=doc.inequality_mode,
            approximation=doc.approximation,
            scaling=scaling,
            holistic={k: _array(v, f"holistic {k}") for k, v in doc.holistic.items()},
            config=doc.config,
        )
    except MechsynthError as exc:
        raise MalformedDocument(str(exc)) from exc


def deserialize(data: Union[str, bytes, dict]) -> Mechanism:
    if isinstance(data, (str, bytes)):
        try:
            raw = json.loads(data)
        except json.JSONDecodeError as exc:
            raise MalformedDocument(f"not valid JSON: {exc}") from exc
    else:
        raw = data
    if not isinstance(raw, dict):
        raise MalformedDocument("mechanism file must be a JSON object")
    version = raw.get("version")
    if version is None:
        raise MalformedDocument("mechanism file has no version field")
    if version != FORMAT_VERSION:
        raise VersionMismatch(version)
    try:
        doc = MechanismDocument.model_validate(raw)
    except ValidationError as exc:
        raise MalformedDocument(str(exc)) from exc
    return from_document(doc)


def save_mechanism(mechanism: Mechanism, path: Union[str, Path]) -> None:
    Path(path).write_text(serialize(mechanism) + "\n")


def load_mechanism(path: Union[str, Path]) -> Mechanism:
    return deserialize(Path(path).read_text())
