import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from mechsynth.model import Instance, InstanceDoc, load_instance  # noqa: E402

DATA = Path(__file__).resolve().parent.parent.parent / "data" / "instances"


def build_instance(**doc) -> Instance:
    """Instance straight from document fields."""
    return Instance.from_document(InstanceDoc.model_validate(doc))


def single_buyer(**overrides) -> Instance:
    doc = {
        "name": "single_buyer",
        "setting": "multi_unit",
        "n": 1,
        "m": 1,
        "L": 2,
        "type_spaces": [["lo", "hi"]],
        "prior": {"kind": "independent", "pmfs": [[0.5, 0.5]]},
        "valuations": [[[0, 1], [0, 2]]],
    }
    doc.update(overrides)
    return build_instance(**doc)


# ---------------------------------------------------------------------------
# Instance fixtures, one per setting
# ---------------------------------------------------------------------------

@pytest.fixture
def instance_file():
    def _load(name: str) -> Instance:
        return load_instance(DATA / f"{name}.json")
    return _load


@pytest.fixture
def single():
    return single_buyer()


@pytest.fixture
def single_budget():
    return single_buyer(name="single_buyer_budget", budgets=[0.5])


@pytest.fixture
def two_buyers(instance_file):
    return instance_file("two_buyers_two_units")


@pytest.fixture
def private_budgets(instance_file):
    return instance_file("private_budgets")


@pytest.fixture
def correlated(instance_file):
    return instance_file("correlated")


@pytest.fixture
def quitting(instance_file):
    return instance_file("quitting_rights")


@pytest.fixture
def soft(instance_file):
    return instance_file("soft_budget")


@pytest.fixture
def seller(instance_file):
    return instance_file("seller_utility")


@pytest.fixture
def procurement(instance_file):
    return instance_file("procurement")


@pytest.fixture
def multi_item(instance_file):
    return instance_file("multi_item_envy_free")


@pytest.fixture
def inequality(instance_file):
    return instance_file("multi_item_inequality")


@pytest.fixture
def build():
    return build_instance


@pytest.fixture
def make_single():
    return single_buyer


def hand_mechanism(inst: Instance, *snapshots, **fields):
    """Mechanism over the given dual snapshots without running synthesis."""
    from mechsynth.oracles import DualSnapshot
    from mechsynth.synthesis import Mechanism

    if not snapshots:
        snapshots = (DualSnapshot.zeros(inst),)
    base = dict(
        setting=inst.setting,
        snapshots=tuple(snapshots),
        R=0.0,
        fingerprint=inst.fingerprint,
        n=inst.n,
        T=inst.T,
        m=inst.m,
        correlated=inst.correlated,
        inequality_mode=inst.inequality_mode,
    )
    base.update(fields)
    return Mechanism(**base)


def selling_snapshot(inst: Instance, beta: float = 1.0):
    """Duals under which every buyer is charged min(budget, value) for the best quantity."""
    from mechsynth.oracles import DualSnapshot, dual_shapes

    a_shape, b_shape = dual_shapes(inst)
    return DualSnapshot(inst.setting, np.zeros(a_shape), np.full(b_shape, beta))


@pytest.fixture
def mechanism():
    return hand_mechanism


# ---------------------------------------------------------------------------
# Random tiny instances
# ---------------------------------------------------------------------------

RANDOM_KINDS = (
    "multi_unit",
    "private_budgets",
    "correlated",
    "quitting_rights",
    "soft_budget",
    "seller_utility",
    "procurement",
    "multi_item",
    "inequality",
)


def _half(rng, low, high, size=None):
    return np.round(rng.uniform(low, high, size) * 2) / 2


def _pmf(rng, k, L):
    """Probabilities of k types, each at least 1/L."""
    return (1.0 / L + (1.0 - k / L) * rng.dirichlet(np.ones(k))).tolist()


def _unit_values(rng, m, L, integral=False):
    if integral:
        return [0.0] + np.sort(rng.integers(0, min(4, L) + 1, m)).astype(float).tolist()
    return [0.0] + np.sort(_half(rng, 0, L, m)).tolist()


def random_instance(kind: str, rng: np.random.Generator) -> Instance:
    """Tiny valid instance of one setting: n <= 3, m <= 2, L <= 8."""
    setting = {"private_budgets": "multi_unit", "correlated": "multi_unit", "inequality": "multi_item"}.get(kind, kind)
    L = int(rng.integers(2, 9)) if kind in ("multi_unit", "private_budgets", "quitting_rights", "soft_budget") else 2
    if kind == "correlated":
        L = int(rng.integers(3, 9))
    n = int(rng.integers(1, 4)) if kind == "multi_unit" else int(rng.integers(1, 3))
    if kind in ("correlated", "procurement"):
        n = 2
    m = 0 if kind == "procurement" else int(rng.integers(1, 3))
    if kind == "multi_item" and n * (m + 1) > 4:
        m = 1
    T = 2 if kind == "correlated" else int(rng.integers(1, min(3, L) + 1))
    doc = {
        "name": f"random_{kind}",
        "setting": setting,
        "n": n,
        "m": m,
        "L": L,
        "type_spaces": [[f"t{k}" for k in range(T)] for _ in range(n)],
        "prior": {"kind": "independent", "pmfs": [_pmf(rng, T, L) for _ in range(n)]},
    }
    if setting in ("multi_unit", "quitting_rights", "soft_budget", "seller_utility"):
        doc["valuations"] = [[_unit_values(rng, m, L, kind == "multi_unit") for _ in range(T)] for _ in range(n)]
    if kind in ("multi_unit", "quitting_rights", "soft_budget"):
        doc["budgets"] = [None if rng.random() < 0.3 else float(_half(rng, 0.5, L)) for _ in range(n)]
    if kind == "private_budgets":
        doc["private_budgets"] = [np.sort(_half(rng, 0, L, T)).tolist() for _ in range(n)]
    if kind == "correlated":
        weights = rng.uniform(1.0, 2.0, 4)
        probs = weights / weights.sum()
        doc["prior"] = {
            "kind": "joint",
            "entries": [
                {"types": [f"t{a}", f"t{b}"], "prob": float(probs[2 * a + b])} for a in range(2) for b in range(2)
            ],
        }
    if kind == "soft_budget":
        doc["soft_cost"] = [
            {"breakpoints": [int(rng.integers(1, L))], "slopes": [1.0, float(rng.choice([1.0, 1.5, 2.0, 2.5]))]}
            for _ in range(n)
        ]
    if kind == "seller_utility":
        span = n * L
        ups = np.cumsum(_half(rng, 0, 2, span))
        downs = -np.cumsum(_half(rng, 0, 2, span))
        table = {0: 0.0}
        table.update({k + 1: float(u) for k, u in enumerate(ups)})
        table.update({-(k + 1): float(d) for k, d in enumerate(downs)})
        doc["seller_utility"] = table
    if kind == "procurement":
        L = int(rng.integers(2, 5))
        doc["L"] = L
        doc["prior"] = {"kind": "independent", "pmfs": [_pmf(rng, T, L) for _ in range(n)]}
        doc["procurement_costs"] = [rng.integers(0, L + 1, T).tolist() for _ in range(n)]
        doc["procurement_values"] = _half(rng, 0, L, n).tolist()
        doc["procurement_budget"] = int(rng.integers(1, L + 1))
    if setting == "multi_item":
        doc["valuations"] = [[_half(rng, 0, L, m).tolist() for _ in range(T)] for _ in range(n)]
        if kind == "inequality":
            doc["inequality_mode"] = True
        else:
            doc["envy_free"] = bool(rng.random() < 0.5)
    return build_instance(**doc)
