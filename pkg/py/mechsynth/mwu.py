"""
Multiplicative-weights feasibility engine with per-round constraint systems.

Each round the caller supplies rows a_t·x >= b_t (through ``RoundConstraints``)
and an oracle that maximises y·(A_t x) over the feasible set.  The engine
keeps one expert per row, declares the system infeasible as soon as the
oracle's value drops below y·b_t, and otherwise multiplies every weight by
(1 - ε)^{M/ρ} or (1 + ε)^{-M/ρ} where M = a_t·x_t - b_t.

Weights are stored as logarithms; ``weights`` exponentiates on demand.
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Callable, Optional

import numpy as np

from mechsynth.errors import MechsynthError

logger = logging.getLogger(__name__)

WIDTH_TOL = 1e-9


class MwuError(MechsynthError):
    """Base class for engine errors."""


class WidthViolation(MwuError):
    """An observed violation exceeds the declared width of its row."""

    def __init__(self, row: int, value: float, width: float):
        super().__init__(f"row {row}: |M| = {abs(value):.6g} exceeds width {width:.6g}")
        self.row = row
        self.value = value
        self.width = width


class OracleFailure(MwuError):
    """The round oracle raised instead of returning a solution."""


class IncompleteTranscript(MwuError):
    """Averages were requested from a run that declared infeasibility."""


class TerminationStatus(str, Enum):
    COMPLETED = "completed"
    DECLARED_INFEASIBLE = "declared_infeasible"
    EARLY_STOPPED = "early_stopped"


@dataclass(frozen=True)
class ExpertState:
    log_weights: np.ndarray
    rho: float
    eps: float
    K: int
    round: int = 0
    normalize: bool = True

    @classmethod
    def initial(cls, r: int, rho: float, eps: float, K: int, normalize: bool = True) -> "ExpertState":
        start = np.full(r, -math.log(r)) if normalize and r else np.zeros(r)
        return cls(start, rho, eps, K, 0, normalize)

    @property
    def r(self) -> int:
        return len(self.log_weights)

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)


@dataclass(frozen=True, eq=False)
class RoundConstraints:
    """Rows of one round.

    ``evaluate`` maps an oracle solution to the vector a_t·x; rows outside
    ``active`` contribute zero violation this round.
    """

    b: np.ndarray
    widths: np.ndarray
    evaluate: Callable[[Any], np.ndarray]
    active: Optional[np.ndarray] = None
    payload: Any = None

    @property
    def r(self) -> int:
        return len(self.b)

    def violations(self, solution: Any) -> np.ndarray:
        M = np.asarray(self.evaluate(solution), dtype=np.float64) - self.b
        if self.active is not None:
            M = np.where(self.active, M, 0.0)
        return M


@dataclass
class MwuTranscript:
    solutions: list[Any] = field(default_factory=list)
    violations: list[np.ndarray] = field(default_factory=list)
    c_values: list[float] = field(default_factory=list)
    status: TerminationStatus = TerminationStatus.COMPLETED
    infeasible_round: Optional[int] = None
    final_state: Optional[ExpertState] = None

    def __len__(self) -> int:
        return len(self.solutions)

    @property
    def succeeded(self) -> bool:
        return self.status is not TerminationStatus.DECLARED_INFEASIBLE


def update_weights(state: ExpertState, M: np.ndarray, widths: Optional[np.ndarray] = None) -> ExpertState:
    """One multiplicative step; ``widths`` defaults to ρ for every row."""
    M = np.asarray(M, dtype=np.float64)
    bound = np.full(state.r, state.rho) if widths is None else np.asarray(widths)
    over = np.abs(M) > bound * (1 + WIDTH_TOL) + WIDTH_TOL
    if np.any(over):
        k = int(np.flatnonzero(over)[0])
        raise WidthViolation(k, float(M[k]), float(bound[k]))
    scaled = M / state.rho
    step = np.where(
        scaled >= 0,
        scaled * math.log1p(-state.eps),
        -scaled * math.log1p(state.eps),
    )
    logw = state.log_weights + step
    if state.normalize:
        logw = logw - np.logaddexp.reduce(logw)
    return replace(state, log_weights=logw, round=state.round + 1)


def run_generalized_ahk(
    r: int,
    rho: float,
    eps: float,
    K: int,
    round_supplier: Callable[[int], RoundConstraints],
    oracle: Callable[[RoundConstraints, np.ndarray], tuple[Any, float]],
    *,
    normalize: bool = True,
    early_stop: Optional[float] = None,
    window: Optional[int] = None,
    on_round: Optional[Callable[[int, np.ndarray, float, float], None]] = None,
) -> MwuTranscript:
    """Run at most K rounds.

    ``early_stop`` ends the run once every row's averaged violation is at
    least ``-early_stop``; the average is cumulative unless ``window`` gives
    a trailing number of rounds.  ``on_round(round, M, C, y·b)`` is called
    after every completed round.
    """
    if K < 1:
        raise MwuError(f"K must be at least 1, got {K}")
    if rho <= 0:
        raise MwuError(f"width must be positive, got {rho}")
    if not 0.0 < eps < 0.5:
        raise MwuError(f"learning rate must lie in (0, 1/2), got {eps}")

    state = ExpertState.initial(r, rho, eps, K, normalize)
    transcript = MwuTranscript()
    total = np.zeros(r)
    recent: deque[np.ndarray] = deque(maxlen=window) if window else deque()

    for t in range(K):
        rc = round_supplier(t)
        if rc.r != r:
            raise MwuError(f"round {t} supplies {rc.r} rows, engine tracks {r}")
        y = state.weights
        try:
            solution, c_value = oracle(rc, y)
        except MwuError:
            raise
        except MechsynthError as exc:
            raise OracleFailure(f"oracle failed in round {t}: {exc}") from exc

        active_b = rc.b if rc.active is None else np.where(rc.active, rc.b, 0.0)
        yb = float(y @ active_b)
        if c_value < yb - WIDTH_TOL * max(1.0, abs(yb)):
            logger.info("round %d: oracle value %.6g below y.b = %.6g, declaring infeasible", t, c_value, yb)
            transcript.status = TerminationStatus.DECLARED_INFEASIBLE
            transcript.infeasible_round = t
            transcript.c_values.append(float(c_value))
            transcript.final_state = state
            return transcript

        M = rc.violations(solution)
        state = update_weights(state, M, rc.widths)
        transcript.solutions.append(solution)
        transcript.violations.append(M)
        transcript.c_values.append(float(c_value))
        total += M
        if window:
            recent.append(M)
        if on_round is not None:
            on_round(t, M, float(c_value), yb)
        logger.debug("round %d: min M %.6g, C %.6g", t, float(M.min(initial=0.0)), c_value)

        if early_stop is not None:
            avg = np.mean(recent, axis=0) if window else total / (t + 1)
            if r == 0 or float(avg.min()) >= -early_stop:
                transcript.status = TerminationStatus.EARLY_STOPPED
                break

    transcript.final_state = state
    return transcript


def average_violation(
    transcript: MwuTranscript,
    row_evaluator: Optional[Callable[[int, Any], np.ndarray]] = None,
) -> np.ndarray:
    """Per-row mean of a_t·x_t - b_t over the recorded rounds.

    ``row_evaluator(round, solution)`` re-evaluates rows instead of using the
    violations stored during the run.
    """
    if not transcript.succeeded or len(transcript) == 0:
        raise IncompleteTranscript(f"transcript ended with status {transcript.status.value}")
    if row_evaluator is None:
        rows = transcript.violations
    else:
        rows = [np.asarray(row_evaluator(t, sol)) for t, sol in enumerate(transcript.solutions)]
    return np.mean(np.stack(rows), axis=0)
