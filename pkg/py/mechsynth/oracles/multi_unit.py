"""
Per-scenario oracles for identical units: plain budgets, quitting rights and
soft budgets.

All three reduce to the same shape.  For each buyer and each quantity q the
best payment is found in closed form or over a finite candidate set, which
gives a per-(buyer, quantity) gain; ``allocate_units`` then splits the m
units with a DP over (buyer, units left).
"""

from __future__ import annotations

import math

import numpy as np

from mechsynth.model import Instance, JointPrior, Setting, TypeVector
from mechsynth.oracles.outcome import DualSnapshot, Outcome


def allocate_units(gain: np.ndarray, m: int) -> tuple[np.ndarray, float]:
    """Maximise Σ_i gain[i, q_i] subject to Σ_i q_i <= m.

    A[i, k] is the best value of buyers i..n-1 with at most k units left.
    Reconstruction walks buyers in index order and takes the smallest
    quantity attaining the optimum, so ties resolve towards earlier buyers
    receiving fewer units.
    """
    n = gain.shape[0]
    A = np.zeros((n + 1, m + 1))
    for i in range(n - 1, -1, -1):
        for k in range(m + 1):
            A[i, k] = np.max(A[i + 1, k::-1] + gain[i, : k + 1])
    q = np.zeros(n, dtype=np.int64)
    k = m
    for i in range(n):
        vals = A[i + 1, k::-1] + gain[i, : k + 1]
        j = int(np.argmax(vals))
        q[i] = j
        k -= j
    return q, float(A[0, m])


def z_weights(inst: Instance, i: int, tvec: TypeVector) -> np.ndarray:
    """z_{i t t_i}(t_{-i}) for every true type t; zero off the prior's support."""
    prior = inst.prior
    z = np.zeros(inst.T)
    if not isinstance(prior, JointPrior) or prior.prob(tvec) <= 0.0:
        return z
    t_minus = tvec[:i] + tvec[i + 1:]
    for t in range(inst.n_types[i]):
        z[t] = prior.conditional_ratio(i, t, tvec[i], t_minus)
    return z


def effective_weights(duals: DualSnapshot, inst: Instance, i: int, tvec: TypeVector) -> tuple[np.ndarray, float]:
    """Per-quantity α and scalar β that buyer i's reported type sees in this scenario."""
    t = tvec[i]
    if inst.correlated:
        z = z_weights(inst, i, tvec)
        alpha = z @ duals.alpha[i, :, t, :]
        beta = float(z @ duals.beta[i, :, t])
        return alpha, beta
    return duals.alpha[i, t, :], float(duals.beta[i, t])


def oracle_multi_unit(duals: DualSnapshot, tvec: TypeVector, inst: Instance) -> tuple[Outcome, float]:
    n, m = inst.n, inst.m
    gain = np.zeros((n, m + 1))
    pay = np.zeros((n, m + 1))
    for i, t in enumerate(tvec):
        alpha, beta = effective_weights(duals, inst, i, tvec)
        for q in range(m + 1):
            cap = min(inst.budget(i, t), inst.value(i, q, t))
            if beta > 0.0:
                pay[i, q] = cap
            gain[i, q] = alpha[q] + max(beta * cap, 0.0)
    q, value = allocate_units(gain, m)
    payments = pay[np.arange(n), q]
    return Outcome(q, payments), value


def _best_payment(candidates: list[float], objective) -> tuple[float, float]:
    """Lowest payment attaining the maximum of ``objective`` over ``candidates``."""
    best_p, best_v = 0.0, -math.inf
    for p in sorted(set(candidates)):
        v = objective(p)
        if v > best_v:
            best_p, best_v = p, v
    return best_p, best_v


def quitting_candidates(inst: Instance, i: int, q: int, t: int) -> list[float]:
    """{0, B_i} ∪ {v_i(q, t')} under the cap min(B_i, v_i(q, t))."""
    cap = min(inst.budget(i, t), inst.value(i, q, t))
    raw = [0.0, inst.budget(i, t)] + [inst.value(i, q, t2) for t2 in range(inst.n_types[i])]
    return sorted({p for p in raw if 0.0 <= p <= cap} | {max(cap, 0.0)})


def oracle_quitting_rights(duals: DualSnapshot, tvec: TypeVector, inst: Instance) -> tuple[Outcome, float]:
    n, m = inst.n, inst.m
    gain = np.zeros((n, m + 1))
    pay = np.zeros((n, m + 1))
    for i, t in enumerate(tvec):
        alpha = duals.alpha[i, t]
        beta = float(duals.beta[i, t])
        for q in range(m + 1):
            vals = [inst.value(i, q, t2) for t2 in range(inst.n_types[i])]

            def objective(p: float) -> float:
                return sum(alpha[t2] * max(v - p, 0.0) for t2, v in enumerate(vals)) + beta * p

            pay[i, q], gain[i, q] = _best_payment(quitting_candidates(inst, i, q, t), objective)
    q, value = allocate_units(gain, m)
    return Outcome(q, pay[np.arange(n), q]), value


def soft_payment_cap(inst: Instance, i: int, q: int, t: int) -> float:
    """Largest payment with c_i(p) <= v_i(q, t) inside the budget box."""
    return max(min(inst.budget(i, t), inst.L, inst.soft_cost_inverse(i, inst.value(i, q, t))), 0.0)


def soft_candidates(inst: Instance, i: int, q: int, t: int) -> list[float]:
    """{0, v_i(q, t), cap} ∪ breakpoints of c_i, filtered by c_i(p) <= v_i(q, t)."""
    cap = soft_payment_cap(inst, i, q, t)
    raw = [0.0, cap, inst.value(i, q, t)]
    if inst.soft_costs is not None:
        raw += [float(b) for b in inst.soft_costs[i].breakpoints]
    v = inst.value(i, q, t)
    return sorted({p for p in raw if 0.0 <= p <= cap and inst.soft_cost(i, p) <= v})


def oracle_soft_budget(duals: DualSnapshot, tvec: TypeVector, inst: Instance) -> tuple[Outcome, float]:
    n, m = inst.n, inst.m
    gain = np.zeros((n, m + 1))
    pay = np.zeros((n, m + 1))
    for i, t in enumerate(tvec):
        alpha = duals.alpha[i, t]
        beta = float(duals.beta[i, t])
        weight = float(alpha[: inst.n_types[i]].sum())
        for q in range(m + 1):
            welfare = sum(alpha[t2] * inst.value(i, q, t2) for t2 in range(inst.n_types[i]))

            def objective(p: float) -> float:
                return welfare - weight * inst.soft_cost(i, p) + beta * p

            pay[i, q], gain[i, q] = _best_payment(soft_candidates(inst, i, q, t), objective)
    q, value = allocate_units(gain, m)
    return Outcome(q, pay[np.arange(n), q]), value


UNIT_ORACLES = {
    Setting.MULTI_UNIT: oracle_multi_unit,
    Setting.QUITTING_RIGHTS: oracle_quitting_rights,
    Setting.SOFT_BUDGET: oracle_soft_budget,
}
