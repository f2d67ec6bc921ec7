"""
Budget-feasible procurement oracle.

For a fixed procured set Q every payment is at least the agent's cost and
the leftover budget B - Σ_Q c_j is worth something only to the agent with
the largest β.  So the optimum is either

  (a) every procured agent paid exactly its cost: a 0/1 knapsack with
      profit α_j + β_j c_j + γ v_j, size c_j, capacity B; or
  (b) a guessed winner i takes the leftover: a knapsack over
      {j != i : β_j <= β_i} with profit α_j + (β_j - β_i) c_j + γ v_j and
      capacity B - c_i, plus α_i + γ v_i + β_i B for the winner.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from mechsynth.model import Instance, TypeVector
from mechsynth.oracles.outcome import DualSnapshot, Outcome


def knapsack(sizes: Sequence[int], profits: Sequence[float], capacity: int) -> tuple[float, list[int]]:
    """Exact 0/1 knapsack over integer sizes; items that do not strictly help are left out."""
    if capacity < 0:
        return float("-inf"), []
    n = len(sizes)
    V = np.zeros(capacity + 1)
    keep = np.zeros((n, capacity + 1), dtype=bool)
    for j in range(n):
        s, gain = int(sizes[j]), float(profits[j])
        if gain <= 0.0 or s > capacity:
            continue
        cand = V[: capacity + 1 - s] + gain
        better = cand > V[s:]
        if better.any():
            V = V.copy()
            V[s:][better] = cand[better]
            keep[j, s:] = better
    chosen = []
    c = capacity
    for j in range(n - 1, -1, -1):
        if keep[j, c]:
            chosen.append(j)
            c -= int(sizes[j])
    return float(V[capacity]), sorted(chosen)


def oracle_procurement(duals: DualSnapshot, tvec: TypeVector, inst: Instance) -> tuple[Outcome, float]:
    n = inst.n
    B = inst.procurement_budget_int
    cost = np.array([inst.cost(i, t) for i, t in enumerate(tvec)], dtype=np.int64)
    base = np.array(
        [duals.alpha[i, t] + duals.gamma * inst.procurement_values[i] for i, t in enumerate(tvec)]
    )
    beta = np.array([duals.beta[i, t] for i, t in enumerate(tvec)])

    value, chosen = knapsack(cost, base + beta * cost, B)
    procured = np.zeros(n, dtype=np.int64)
    procured[chosen] = 1
    payments = procured * cost.astype(np.float64)

    for i in range(n):
        if beta[i] <= 0.0 or cost[i] > B:
            continue
        others = [j for j in range(n) if j != i and beta[j] <= beta[i]]
        sub_val, sub_chosen = knapsack(
            [cost[j] for j in others],
            [base[j] + (beta[j] - beta[i]) * cost[j] for j in others],
            B - int(cost[i]),
        )
        total = base[i] + beta[i] * B + sub_val
        if total > value:
            value = float(total)
            members = [others[k] for k in sub_chosen]
            procured = np.zeros(n, dtype=np.int64)
            procured[members] = 1
            procured[i] = 1
            payments = procured * cost.astype(np.float64)
            payments[i] = float(B - sum(int(cost[j]) for j in members))
    return Outcome(procured, payments), float(value)
