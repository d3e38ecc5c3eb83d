"""Registered example semigroups with their known properties."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .measure import Measure, bl_distance
from .semigroup import (ClosedFormModel, FlowModel, GeneratorMatrix, GeneratorModel,
                        SemigroupModel, _clean_row, _to_dense)
from .space import DEFAULT_FLOW_HORIZON, MetricSpace, coordinate_space, example_space, flow_space
from .testfn import CB, LB, LBS

SUPPORTED = "supported"
REFUTED = "refuted"
INCONCLUSIVE = "inconclusive"
VERDICTS = (SUPPORTED, REFUTED, INCONCLUSIVE)

PROPERTIES = ("asymptotic_stability", "feller", "stochastic_continuity_zero", "strong_continuity",
              "e_property", "eventual_e_property", "interval_e_property")

ANY = "*"


@dataclass(frozen=True, eq=False)
class ZooEntry:
    """A registered model and what is known about it.

    ``verdicts`` maps ``(property, class, anchor)`` to a verdict; ``"*"``
    matches any class or anchor.
    """

    id: str
    params: dict
    model: SemigroupModel
    invariant: Measure | None
    verdicts: dict = field(default_factory=dict)
    alternate: SemigroupModel | None = None

    @property
    def space(self) -> MetricSpace:
        return self.model.space

    def declared(self, prop: str, fclass: str | None = None, anchor: str | None = None) -> str | None:
        """Declared verdict, most specific key first; None if nothing is declared."""
        for key in ((prop, fclass, anchor), (prop, fclass, ANY), (prop, ANY, anchor), (prop, ANY, ANY)):
            if key in self.verdicts:
                return self.verdicts[key]
        return None

    def describe(self) -> str:
        params = ";".join(f"{k}={v}" for k, v in sorted(self.params.items()))
        decl = ";".join(f"{p}[{c},{a}]={v}" for (p, c, a), v in sorted(self.verdicts.items()))
        return f"{self.id}\t{params}\t{decl}"


# -- example 1 -----------------------------------------------------------------

def _reciprocal_index(space: MetricSpace) -> np.ndarray:
    """``n`` for points ``1/n`` (and 0 elsewhere), as integers."""
    c = space.coordinates
    with np.errstate(divide="ignore"):
        n = np.where((c > 0) & (c <= 1), np.rint(1.0 / np.where(c > 0, c, 1.0)), 0.0)
    return n.astype(np.int64)


def _example1_builder(space: MetricSpace):
    i0 = space.index_of("0")
    i1 = space.index_of("1")
    n = _reciprocal_index(space).astype(float)
    others = np.flatnonzero(np.arange(space.size) != i0)

    def build(_space, t):
        if t == 0.0:
            idx = np.arange(space.size)
            return idx, idx, np.ones(space.size)
        stay = np.exp(-n[others] * t)
        rows = np.concatenate([[i0], others, others])
        cols = np.concatenate([[i1], others, np.full(len(others), i1)])
        vals = np.concatenate([[1.0], stay, -np.expm1(-n[others] * t)])
        return rows, cols, vals

    return build


def _reciprocal_critical(space: MetricSpace, z, xs=None) -> np.ndarray:
    """Times ``t = 1/n`` matching the approach points ``1/n`` (and ``n``)."""
    idx = np.arange(space.size) if xs is None else np.asarray(xs, dtype=int)
    c = space.coordinates[idx]
    c = c[c > 0]
    return np.unique(np.where(c <= 1, c, 1.0 / c))


def _example1(n_max: int = 1000) -> ZooEntry:
    space = example_space("example1", n_max)
    inv = Measure.dirac(space, "1")
    model = ClosedFormModel("example1", space, _example1_builder(space), invariant=inv,
                            critical=_reciprocal_critical)
    verdicts = {
        ("asymptotic_stability", ANY, ANY): SUPPORTED,
        ("feller", ANY, ANY): SUPPORTED,
        ("stochastic_continuity_zero", ANY, "0"): REFUTED,
        ("strong_continuity", ANY, ANY): REFUTED,
        ("e_property", CB, "0"): REFUTED,
        ("e_property", LB, "0"): REFUTED,
        ("eventual_e_property", ANY, ANY): SUPPORTED,
    }
    return ZooEntry("example1", {"n_max": n_max}, model, inv, verdicts)


# -- example 2 -----------------------------------------------------------------

def _c_coeff(n: np.ndarray, t: float) -> np.ndarray:
    """``n/(n-1) (e^{-t} - e^{-nt})``, the weight of 0 in the row of ``n``."""
    u = (n - 1.0) * t
    out = np.empty_like(n)
    small = u <= 1.0
    out[small] = n[small] / (n[small] - 1.0) * np.exp(-n[small] * t) * np.expm1(u[small])
    big = ~small
    out[big] = n[big] / (n[big] - 1.0) * (np.exp(-t) - np.exp(-n[big] * t))
    return out


def _d_coeff(n: np.ndarray, t: float) -> np.ndarray:
    """``n^2/(n-1)^2 (e^{-t} + e^{-nt}(t - nt - 1))``, the weight of 0 in the row of ``1/n``."""
    u = (n - 1.0) * t
    g = np.empty_like(n)
    tiny = u < 1e-3
    v = u[tiny]
    g[tiny] = np.exp(-n[tiny] * t) * v * v * (0.5 + v * (1 / 6 + v * (1 / 24 + v / 120)))
    mid = (u >= 1e-3) & (u <= 1.0)
    g[mid] = np.exp(-n[mid] * t) * (np.expm1(u[mid]) - u[mid])
    big = u > 1.0
    g[big] = np.exp(-t) - np.exp(-n[big] * t) * (1.0 + u[big])
    return n * n / (n - 1.0) ** 2 * g


def _example2_builder(space: MetricSpace):
    c = space.coordinates
    i0, i1 = space.index_of("0"), space.index_of("1")
    big = np.flatnonzero(c >= 2)
    small = np.flatnonzero((c > 0) & (c < 1))
    n_big = c[big]
    n_small = np.rint(1.0 / c[small])
    to_big = space.indices([str(int(m)) for m in n_small])

    def build(_space, t):
        if t == 0.0:
            idx = np.arange(space.size)
            return idx, idx, np.ones(space.size)
        rows, cols, vals = [], [], []
        # state 1 absorbing; state 0 leaves at rate 1
        rows += [i1, i0, i0]
        cols += [i1, i0, i1]
        vals += [1.0, np.exp(-t), -np.expm1(-t)]
        if len(big):
            stay = np.exp(-n_big * t)
            cz = _c_coeff(n_big, t)
            a = np.clip(1.0 - stay - cz, 0.0, None)
            rows += [big, big, big]
            cols += [big, np.full(len(big), i0), np.full(len(big), i1)]
            vals += [stay, cz, a]
        if len(small):
            stay = np.exp(-n_small * t)
            hop = n_small * t * stay
            dz = _d_coeff(n_small, t)
            b = np.clip(1.0 - stay - hop - dz, 0.0, None)
            rows += [small, small, small, small]
            cols += [small, to_big, np.full(len(small), i0), np.full(len(small), i1)]
            vals += [stay, hop, dz, b]
        return (np.concatenate([np.atleast_1d(r) for r in rows]),
                np.concatenate([np.atleast_1d(c) for c in cols]),
                np.concatenate([np.atleast_1d(v) for v in vals]))

    return build


def column_generator_block(n: int) -> np.ndarray:
    """Column-conservative 4x4 generator over the states ``(1, 0, n, 1/n)``.

    ``exp(Q t)[i, j]`` is the weight that the row of state ``j`` puts on
    state ``i``; columns sum to zero.
    """
    if n < 2:
        raise ValueError("block generator needs n >= 2")
    return np.array([[0.0, 1.0, 0.0, 0.0],
                     [0.0, -1.0, float(n), 0.0],
                     [0.0, 0.0, -float(n), float(n)],
                     [0.0, 0.0, 0.0, -float(n)]])


def example2_generator(space: MetricSpace) -> GeneratorMatrix:
    """Row-conservative generator over a truncated example-2 space.

    Rates: ``0 -> 1`` at 1, ``n -> 0`` at n, ``1/n -> n`` at n; 1 absorbing.
    Each block ``{1, 0, n, 1/n}`` is the transpose of :func:`column_generator_block`.
    """
    c = space.coordinates
    q = np.zeros((space.size, space.size))
    i0, i1 = space.index_of("0"), space.index_of("1")
    q[i0, i1], q[i0, i0] = 1.0, -1.0
    for i in np.flatnonzero(c >= 2):
        q[i, i0], q[i, i] = c[i], -c[i]
    for i in np.flatnonzero((c > 0) & (c < 1)):
        m = np.rint(1.0 / c[i])
        j = space.index_of(str(int(m)))
        q[i, j], q[i, i] = m, -m
    return GeneratorMatrix(space, q)


def _example2(n_max: int = 50) -> ZooEntry:
    space = example_space("example2", n_max)
    inv = Measure.dirac(space, "1")
    closed = ClosedFormModel("example2", space, _example2_builder(space), invariant=inv,
                             critical=_reciprocal_critical)
    gen = GeneratorModel(example2_generator(space), name="example2_generator",
                         critical=_reciprocal_critical)
    verdicts = {
        ("asymptotic_stability", ANY, ANY): SUPPORTED,
        ("feller", ANY, ANY): SUPPORTED,
        ("stochastic_continuity_zero", ANY, ANY): SUPPORTED,
        ("strong_continuity", ANY, ANY): REFUTED,
        ("e_property", CB, "0"): REFUTED,
        ("e_property", LB, "0"): REFUTED,
        ("eventual_e_property", ANY, ANY): SUPPORTED,
        ("interval_e_property", ANY, "0"): REFUTED,
    }
    return ZooEntry("example2", {"n_max": n_max}, closed, inv, verdicts, alternate=gen)


def block_space(n: int) -> MetricSpace:
    """The four states ``(1, 0, n, 1/n)`` in the generator block's order."""
    return coordinate_space([1.0, 0.0, float(n), 1.0 / n], ["1", "0", str(n), f"1/{n}"],
                            compact_model=False, limit_point="0")


def cross_check_example2(n: int, times: Sequence[float]) -> float:
    """Largest bl distance between closed-form rows and ``exp(Q_n t)`` rows.

    Compares all four states of the block ``{1, 0, n, 1/n}`` at every time.
    """
    if n < 2:
        raise ValueError("cross-check needs n >= 2")
    space = block_space(n)
    closed = ClosedFormModel("example2", space, _example2_builder(space))
    gen = GeneratorModel(GeneratorMatrix(space, column_generator_block(n).T), cache_size=1)
    worst = 0.0
    for t in times:
        A = _to_dense(closed.matrix(float(t)))
        B = gen.matrix(float(t))
        for a, b in zip(A, B):
            worst = max(worst, bl_distance(Measure(space, _clean_row(a)), Measure(space, _clean_row(b))))
    return worst


# -- flows -------------------------------------------------------------------

def _shift_critical(space: MetricSpace, z, xs=None) -> np.ndarray:
    """Times carrying ``z`` onto integers, where narrow spikes sit."""
    z = float(z)
    n = np.arange(max(2.0, np.ceil(z)), np.floor(space.upper_bound - 1.0) + 1.0)
    return n - z


def _mult_critical(space: MetricSpace, z, xs=None) -> np.ndarray:
    """``ln(n / z)``: times at which ``z e^t`` lands on an integer."""
    z = float(z)
    n = np.arange(max(1.0, np.ceil(z)), np.floor(space.upper_bound - 1.0) + 1.0)
    return np.log(n / z)


def _shift_flow(horizon: float = DEFAULT_FLOW_HORIZON) -> ZooEntry:
    space = flow_space(1.0, horizon)
    model = FlowModel("shift_flow", space, lambda x, t: x + t, critical=_shift_critical,
                      time_to=lambda x, X: X - x)
    verdicts = {
        ("e_property", LB, ANY): SUPPORTED,
        ("e_property", LBS, ANY): SUPPORTED,
        ("e_property", CB, ANY): REFUTED,
        ("eventual_e_property", LB, ANY): SUPPORTED,
        ("eventual_e_property", LBS, ANY): SUPPORTED,
    }
    return ZooEntry("shift_flow", {"horizon": horizon}, model, None, verdicts)


def _mult_flow(horizon: float = DEFAULT_FLOW_HORIZON) -> ZooEntry:
    space = flow_space(1.0, horizon)
    model = FlowModel("mult_flow", space, lambda x, t: x * np.exp(t), critical=_mult_critical,
                      time_to=lambda x, X: float(np.log(X / x)))
    verdicts = {
        ("e_property", LBS, ANY): SUPPORTED,
        ("e_property", LB, ANY): REFUTED,
        ("e_property", CB, ANY): REFUTED,
        ("eventual_e_property", LB, ANY): REFUTED,
    }
    return ZooEntry("mult_flow", {"horizon": horizon}, model, None, verdicts)


# -- a kernel without the Feller property ----------------------------------------

def _antifeller_builder(space: MetricSpace):
    i1 = space.index_of("1")

    def build(_space, t):
        idx = np.arange(space.size)
        if t == 0.0:
            return idx, idx, np.ones(space.size)
        c = space.coordinates
        cols = np.where(c == 0.0, idx, i1)
        return idx, cols, np.ones(space.size)

    return build


def _antifeller(n_max: int = 1000) -> ZooEntry:
    space = example_space("example1", n_max)
    model = ClosedFormModel("antifeller", space, _antifeller_builder(space),
                            critical=_reciprocal_critical)
    verdicts = {
        ("feller", ANY, ANY): REFUTED,
        ("stochastic_continuity_zero", ANY, "0"): SUPPORTED,
        ("strong_continuity", ANY, ANY): REFUTED,
    }
    return ZooEntry("antifeller", {"n_max": n_max}, model, None, verdicts)


# -- generic birth-death chains --------------------------------------------------

def birth_death_generator(birth: Sequence[float], death: Sequence[float]) -> GeneratorMatrix:
    """Chain on ``0..m-1`` with up-rates ``birth[i]`` (i < m-1) and down-rates ``death[i]`` (i > 0)."""
    birth = np.asarray(birth, dtype=float)
    death = np.asarray(death, dtype=float)
    m = len(birth) + 1
    if len(death) != m - 1:
        raise ValueError("need m-1 birth and m-1 death rates")
    if np.any(birth <= 0) or np.any(death <= 0):
        raise ValueError("birth-death rates must be positive")
    space = coordinate_space(np.arange(m, dtype=float), [str(i) for i in range(m)], limit_point=None)
    q = np.zeros((m, m))
    q[np.arange(m - 1), np.arange(1, m)] = birth
    q[np.arange(1, m), np.arange(m - 1)] = death
    q[np.diag_indices(m)] = -q.sum(axis=1)
    return GeneratorMatrix(space, q)


def _birth_death(n_states: int = 3, seed: int | None = 0, birth=None, death=None) -> ZooEntry:
    if n_states < 2:
        raise ValueError("birth-death chain needs at least 2 states")
    if birth is None or death is None:
        rng = np.random.default_rng(seed)
        birth = rng.uniform(0.5, 2.0, n_states - 1) if birth is None else birth
        death = rng.uniform(0.5, 2.0, n_states - 1) if death is None else death
    model = GeneratorModel(birth_death_generator(birth, death), name="birth_death")
    verdicts = {p: SUPPORTED for p in
                [(prop, ANY, ANY) for prop in ("asymptotic_stability", "feller", "stochastic_continuity_zero",
                                                "strong_continuity", "e_property", "eventual_e_property",
                                                "interval_e_property")]}
    return ZooEntry("birth_death", {"n_states": n_states, "seed": seed}, model, model.invariant(), verdicts)


_FACTORIES: dict[str, tuple[Callable, dict]] = {
    "example1": (_example1, {"n_max": 1000}),
    "example2": (_example2, {"n_max": 50}),
    "shift_flow": (_shift_flow, {"horizon": DEFAULT_FLOW_HORIZON}),
    "mult_flow": (_mult_flow, {"horizon": DEFAULT_FLOW_HORIZON}),
    "antifeller": (_antifeller, {"n_max": 1000}),
    "birth_death": (_birth_death, {"n_states": 3, "seed": 0}),
}

ZOO_IDS = tuple(_FACTORIES)


def instantiate(id: str, **params) -> ZooEntry:
    """Build a registered model; unknown parameters are rejected."""
    if id not in _FACTORIES:
        raise KeyError(f"unknown zoo id {id!r}; known: {', '.join(ZOO_IDS)}")
    factory, defaults = _FACTORIES[id]
    extra = set(params) - set(defaults) - {"birth", "death"}
    if extra:
        raise TypeError(f"{id} does not take {sorted(extra)}")
    if "n_max" in params and int(params["n_max"]) < 2:
        raise ValueError("truncation n_max must be >= 2")
    if "n_max" in params:
        params["n_max"] = int(params["n_max"])
    if "n_states" in params:
        params["n_states"] = int(params["n_states"])
    return factory(**{**defaults, **params})


def list_entries() -> list[tuple[str, dict]]:
    """``(id, default parameters)`` for every registered model."""
    return [(k, dict(v[1])) for k, v in _FACTORIES.items()]
