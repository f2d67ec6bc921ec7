"""
Oracle for a seller with a non-linear utility U over total revenue.

Payments live on the integer grid -L..L, so the running revenue z of the
first i buyers is an integer in [-nL, nL] and U telescopes over the DP:
stepping from z to z + p adds γ·(U(z + p) - U(z)).  States are (units
allocated, z); each buyer's options are the (p, q) pairs it accepts, i.e.
u_i(p, q, t_i) >= 0.
"""

from __future__ import annotations

import math

import numpy as np

from mechsynth.model import Instance, TypeVector
from mechsynth.oracles.outcome import DualSnapshot, NonIntegerPayment, Outcome


def buyer_options(inst: Instance, i: int, t: int) -> list[tuple[int, int]]:
    """Acceptable (p, q) pairs, ordered by quantity, then |p|, then p."""
    opts = [
        (int(p), q)
        for q in range(inst.m + 1)
        for p in inst.payment_grid
        if inst.buyer_utility_at(i, int(p), q, t) >= 0.0
    ]
    return sorted(opts, key=lambda pq: (pq[1], abs(pq[0]), pq[0]))


def _seller_curve(inst: Instance) -> np.ndarray:
    if inst.L != inst.L_int:
        raise NonIntegerPayment(f"L = {inst.L} does not give an integer payment grid")
    table = inst.seller_table
    if np.any(np.isnan(table)):
        raise NonIntegerPayment("seller utility table does not cover every integer revenue in [-nL, nL]")
    return table


def oracle_seller_utility(duals: DualSnapshot, tvec: TypeVector, inst: Instance) -> tuple[Outcome, float]:
    U = _seller_curve(inst)
    n, m, L = inst.n, inst.m, inst.L_int
    span = n * L
    width = 2 * span + 1
    gamma = duals.gamma

    value = np.full((m + 1, width), -math.inf)
    value[0, span] = gamma * U[span]
    choices = []  # per buyer: option index that produced each state
    for i, t in enumerate(tvec):
        opts = buyer_options(inst, i, t)
        new = np.full((m + 1, width), -math.inf)
        pick = np.full((m + 1, width), -1, dtype=np.int64)
        for oi, (p, q) in enumerate(opts):
            a = float(duals.alpha[i, t, p + L, q])
            lo, hi = max(0, -p), min(width, width - p)
            if lo >= hi:
                continue
            step = a + gamma * (U[lo + p: hi + p] - U[lo:hi])
            for k in range(m + 1 - q):
                cand = value[k, lo:hi] + step
                target = new[k + q, lo + p: hi + p]
                better = cand > target
                if better.any():
                    target[better] = cand[better]
                    pick[k + q, lo + p: hi + p][better] = oi
        choices.append((opts, pick))
        value = new

    ks, zs = np.meshgrid(np.arange(m + 1), np.arange(width) - span, indexing="ij")
    order = np.lexsort((zs.ravel(), np.abs(zs).ravel(), ks.ravel()))
    flat = value.ravel()[order]
    best = int(order[int(np.argmax(flat))])
    k, zi = divmod(best, width)
    objective = float(value[k, zi])

    q_out = np.zeros(n, dtype=np.int64)
    p_out = np.zeros(n)
    for i in range(n - 1, -1, -1):
        opts, pick = choices[i]
        p, q = opts[int(pick[k, zi])]
        q_out[i], p_out[i] = q, float(p)
        k -= q
        zi -= p
    return Outcome(q_out, p_out), objective
