"""Finitely supported measures, pairings and weak-convergence diagnostics."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from .space import MetricSpace, StatePoint
from .testfn import LIMIT_TOL, TestFunction, make_tent

PROB_TOL = 1e-12
SPHERE_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class Measure:
    """Nonnegative weights on a finite space, or atoms on a flow half-line.

    For finite spaces ``weights`` is a dense vector aligned with
    ``space.points``. For flow spaces ``positions`` holds the atom locations.
    """

    space: MetricSpace
    weights: np.ndarray
    positions: np.ndarray | None = None

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "weights", w)
        if self.space.is_finite:
            if w.shape != (self.space.size,):
                raise ValueError("weight vector does not match the space")
        else:
            pos = np.asarray(self.positions, dtype=float)
            object.__setattr__(self, "positions", pos)
            if pos.shape != w.shape:
                raise ValueError("positions and weights differ in length")
        if np.any(w < 0):
            raise ValueError("measure weights must be nonnegative")
        if not np.all(np.isfinite(w)):
            raise ValueError("measure weights must be finite")

    @classmethod
    def dirac(cls, space: MetricSpace, x) -> "Measure":
        if not space.is_finite:
            return cls(space, np.ones(1), np.array([float(x)]))
        w = np.zeros(space.size)
        w[space.index_of(x)] = 1.0
        return cls(space, w)

    @classmethod
    def from_mapping(cls, space: MetricSpace, weights: Mapping) -> "Measure":
        if not space.is_finite:
            pos = np.array([float(k) for k in weights], dtype=float)
            return cls(space, np.array(list(weights.values()), dtype=float), pos)
        w = np.zeros(space.size)
        for k, v in weights.items():
            w[space.index_of(k)] += float(v)
        return cls(space, w)

    @property
    def mass(self) -> float:
        return float(self.weights.sum())

    def is_probability(self, tol: float = PROB_TOL) -> bool:
        return abs(self.mass - 1.0) <= tol

    def of(self, idx) -> float:
        """Mass of a set of point indices."""
        return float(self.weights[np.asarray(idx, dtype=int)].sum())

    def weight(self, x) -> float:
        return float(self.weights[self.space.index_of(x)])

    def support_indices(self, threshold: float = 0.0) -> np.ndarray:
        return np.flatnonzero(self.weights > threshold)

    def as_pairs(self, threshold: float = 0.0) -> list[tuple[str, float]]:
        """``(label, weight)`` pairs of the support, in space order."""
        if not self.space.is_finite:
            keep = self.weights > threshold
            return [(repr(float(p)), float(w)) for p, w in zip(self.positions[keep], self.weights[keep])]
        return [(self.space.labels[i], float(self.weights[i])) for i in self.support_indices(threshold)]

    def __repr__(self):
        body = ", ".join(f"{lab}: {w:.6g}" for lab, w in self.as_pairs()[:8])
        return f"Measure({{{body}}})"


def format_measure(mu: Measure) -> str:
    """``label=weight`` list used in report files."""
    return ";".join(f"{lab}={w!r}" for lab, w in mu.as_pairs())


def parse_measure(space: MetricSpace, text: str) -> Measure:
    """Inverse of :func:`format_measure`; a bare point means a Dirac mass."""
    text = text.strip()
    if "=" not in text:
        return Measure.dirac(space, text)
    pairs = [item.split("=", 1) for item in text.replace(",", ";").split(";") if item.strip()]
    return Measure.from_mapping(space, {k.strip(): float(v) for k, v in pairs})


def pair(f: TestFunction, mu: Measure) -> float:
    """Integral of ``f`` against ``mu``."""
    if not mu.space.is_finite:
        return float(np.dot(np.asarray(f(mu.positions), dtype=float), mu.weights))
    idx = mu.support_indices()
    if len(idx) == 0:
        return 0.0
    return float(np.dot(f.values(mu.space, idx), mu.weights[idx]))


def support(mu: Measure, threshold: float = 0.0) -> set[StatePoint]:
    """Atoms with weight above ``threshold``; on a finite space this is the
    topological support."""
    if threshold < 0:
        raise ValueError("threshold must be nonnegative")
    return {mu.space.points[i] for i in mu.support_indices(threshold)}


def convex_combine(coeffs: Sequence[float], measures: Sequence[Measure]) -> Measure:
    """Pointwise ``sum_i c_i mu_i`` over a shared space."""
    if len(coeffs) != len(measures):
        raise ValueError("coefficients and measures differ in length")
    if not measures:
        raise ValueError("nothing to combine")
    if any(c < 0 for c in coeffs):
        raise ValueError("coefficients must be nonnegative")
    space = measures[0].space
    if any(m.space is not space for m in measures):
        raise ValueError("measures live on different spaces")
    if not space.is_finite:
        pos = np.concatenate([m.positions for m in measures])
        w = np.concatenate([c * m.weights for c, m in zip(coeffs, measures)])
        return _merge_flow_atoms(space, pos, w)
    w = np.zeros(space.size)
    for c, m in zip(coeffs, measures):
        w += c * m.weights
    return Measure(space, w)


def _merge_flow_atoms(space, pos, w) -> Measure:
    uniq, inv = np.unique(pos, return_inverse=True)
    return Measure(space, np.bincount(inv, weights=w), uniq)


def restrict_normalize(mu: Measure, ball) -> Measure:
    """``mu(. n ball) / mu(ball)``; ``ball`` is an index array or point keys."""
    idx = _as_indices(mu.space, ball)
    m = mu.of(idx)
    if m <= 0:
        raise ValueError("measure puts no mass on the ball")
    w = np.zeros_like(mu.weights)
    w[idx] = mu.weights[idx] / m
    return Measure(mu.space, w)


def _as_indices(space: MetricSpace, members) -> np.ndarray:
    arr = np.asarray(list(members) if not isinstance(members, np.ndarray) else members)
    if arr.dtype.kind in "iu":
        return arr.astype(int)
    return space.indices(list(members))


def boundary_mass(mu: Measure, z, r: float) -> float:
    """Mass on the sphere ``{x : rho(x, z) = r}`` (equality within 1e-12)."""
    if r <= 0:
        raise ValueError("radius must be positive")
    d = mu.space.distances_from(z)
    return float(mu.weights[np.abs(d - r) <= SPHERE_TOL].sum())


def total_variation(mu: Measure, nu: Measure) -> float:
    """``sum_x |mu(x) - nu(x)|``; bounds ``|<f, mu - nu>|`` by ``||f||_inf`` times it."""
    if mu.space is not nu.space:
        raise ValueError("measures live on different spaces")
    if not mu.space.is_finite:
        pos = np.concatenate([mu.positions, nu.positions])
        w = np.concatenate([mu.weights, -nu.weights])
        uniq, inv = np.unique(pos, return_inverse=True)
        return float(np.abs(np.bincount(inv, weights=w, minlength=len(uniq))).sum())
    return float(np.abs(mu.weights - nu.weights).sum())


def bl_distance(mu: Measure, nu: Measure, method: str = "auto") -> float:
    """Bounded-Lipschitz distance ``sup <f, mu - nu>`` over ``|f| <= 1``, ``Lip(f) <= 1``.

    Solved exactly as a linear program in the values of ``f`` on the union
    of both supports; a feasible ``f`` there extends to the whole space
    without raising either bound (McShane extension clipped to [-1, 1]).
    On the real line the program is a chain and ``method="auto"`` solves it
    by dynamic programming; ``method="lp"`` forces the simplex solver.
    """
    if method not in ("auto", "lp"):
        raise ValueError(f"unknown method {method!r}")
    if mu.space is not nu.space:
        raise ValueError("measures live on different spaces")
    space = mu.space
    if space.is_finite:
        idx = np.flatnonzero((mu.weights > 0) | (nu.weights > 0))
        diff = mu.weights[idx] - nu.weights[idx]
        coords = None if space.coordinates is None else space.coordinates[idx]
        dist = None if coords is not None else space.distance_submatrix(idx)
    else:
        pos = np.concatenate([mu.positions, nu.positions])
        w = np.concatenate([mu.weights, -nu.weights])
        coords, inv = np.unique(pos, return_inverse=True)
        diff = np.bincount(inv, weights=w, minlength=len(coords))
        dist = None
    if coords is not None and method == "auto":
        return _bl_chain(diff, coords)
    return _bl_lp(diff, coords, dist)


def _bl_chain(diff: np.ndarray, coords: np.ndarray) -> float:
    """Exact optimum of the line LP.

    ``V_i(y)`` is the best partial objective with ``f_i = y``; it is concave
    and piecewise linear on [-1, 1]. Passing to the next point replaces
    ``V`` by ``y -> V(clip(x*, y - g, y + g))`` (``x*`` its maximiser, ``g``
    the gap) and adds the linear term ``d_{i+1} y``.
    """
    if len(diff) == 0 or not np.any(diff):
        return 0.0
    order = np.argsort(coords)
    d = diff[order]
    gaps = np.diff(coords[order])
    xs = np.array([-1.0, 1.0])
    vs = d[0] * xs
    for g, di in zip(gaps, d[1:]):
        k = int(np.argmax(vs))
        xstar = xs[k]
        cand = np.concatenate([xs[:k] - g, [xstar - g, xstar + g], xs[k + 1:] + g, [-1.0, 1.0]])
        cand = np.unique(np.clip(cand, -1.0, 1.0))
        src = np.clip(xstar, cand - g, cand + g)
        vs = np.interp(src, xs, vs) + di * cand
        xs = cand
    return max(0.0, float(vs.max()))


def _bl_lp(diff: np.ndarray, coords: np.ndarray | None, dist: np.ndarray | None) -> float:
    m = len(diff)
    if m == 0 or not np.any(diff):
        return 0.0
    if m == 1:
        return float(abs(diff[0]))
    if coords is not None:
        # on the line, constraints between neighbours imply all the others
        order = np.argsort(coords)
        diff = diff[order]
        gaps = np.diff(coords[order])
        rows = np.arange(m - 1)
        a = sparse.coo_matrix((np.r_[np.ones(m - 1), -np.ones(m - 1)],
                               (np.r_[rows, rows], np.r_[rows + 1, rows])), shape=(m - 1, m))
        caps = gaps
    else:
        iu, ju = np.triu_indices(m, k=1)
        k = len(iu)
        rows = np.arange(k)
        a = sparse.coo_matrix((np.r_[np.ones(k), -np.ones(k)],
                               (np.r_[rows, rows], np.r_[iu, ju])), shape=(k, m))
        caps = dist[iu, ju]
    a = sparse.vstack([a, -a]).tocsr()
    b = np.r_[caps, caps]
    res = linprog(-diff, A_ub=a, b_ub=b, bounds=[(-1.0, 1.0)] * m, method="highs-ds",
                  options={"primal_feasibility_tolerance": 1e-10,
                           "dual_feasibility_tolerance": 1e-10})
    if res.status != 0:
        raise RuntimeError(f"bounded-Lipschitz LP failed: {res.message}")
    return max(0.0, float(-res.fun))


@dataclass(frozen=True)
class Ball:
    """Open (or closed) ball used as a set in the weak-convergence battery."""

    center: object
    radius: float
    closed: bool = False

    def members(self, space: MetricSpace) -> np.ndarray:
        d = space.distances_from(self.center)
        if self.closed:
            return np.flatnonzero(d <= self.radius + SPHERE_TOL)
        return np.flatnonzero(d < self.radius - SPHERE_TOL) if self.radius > SPHERE_TOL \
            else np.array([], dtype=int)

    def describe(self, space: MetricSpace) -> str:
        lab = space.point(self.center).label
        return f"{'Cl' if self.closed else ''}B({lab},{self.radius:.6g})"


@dataclass
class WeakConvergenceReport:
    verdicts: dict[str, bool]
    gaps: dict[str, float]
    families: dict[str, list[str]] = field(default_factory=dict)
    tail_start: int = 0
    tol: float = LIMIT_TOL

    @property
    def converges(self) -> bool:
        return all(self.verdicts.values())

    @property
    def consistent(self) -> bool:
        return len(set(self.verdicts.values())) == 1


CRITERIA = ("lipschitz_functions", "closed_sets", "open_sets", "continuity_sets")


def _tail(sequence: Sequence[Measure], tail_fraction: float) -> tuple[int, list[Measure]]:
    if not sequence:
        raise ValueError("empty measure sequence")
    if not 0 < tail_fraction <= 1:
        raise ValueError("tail_fraction must be in (0, 1]")
    start = min(len(sequence) - 1, int(np.floor(len(sequence) * (1 - tail_fraction))))
    return start, list(sequence[start:])


def _set_indices(space, s) -> np.ndarray:
    if isinstance(s, Ball):
        return s.members(space)
    return _as_indices(space, s)


def _describe_set(space, s) -> str:
    if isinstance(s, Ball):
        return s.describe(space)
    return "{" + ",".join(space.labels[i] for i in _as_indices(space, s)) + "}"


def default_families(space: MetricSpace, measures: Iterable[Measure], max_centers: int = 24):
    """Balls and singletons around the atoms that matter.

    Centres are every point for small spaces, otherwise the atoms of the
    given measures plus the space's limit point. Radii are the distinct
    distances from each centre to the other centres (at most eight).
    """
    if space.size <= 12:
        centers = list(range(space.size))
    else:
        cset = set()
        for m in measures:
            cset.update(int(i) for i in m.support_indices())
        if space.limit_point is not None:
            cset.add(space.index_of(space.limit_point))
        centers = sorted(cset)[:max_centers]
    closed, opened, funcs = [], [], []
    for c in centers:
        lab = space.labels[c]
        d = space.distances_from(lab)[centers if len(centers) > 1 else slice(None)]
        radii = np.unique(d[d > 0])[:8]
        closed.append([c])
        for r in radii:
            closed.append(Ball(lab, float(r), closed=True))
            opened.append(Ball(lab, float(r)))
        eps = float(radii[0]) if len(radii) else 1.0
        funcs.append(make_tent([lab], eps, space))
    return closed, opened, funcs


def portmanteau_battery(sequence: Sequence[Measure], limit: Measure, closed_sets=None,
                        open_sets=None, continuity_sets=None, functions=None,
                        tail_fraction: float = 0.5, tol: float = LIMIT_TOL) -> WeakConvergenceReport:
    """Check the four equivalent forms of weak convergence along a finite tail.

    limsup and liminf are the max and min over the last ``tail_fraction`` of
    the sequence. Sets may be :class:`Ball` objects or collections of point
    keys; continuity sets that are balls are used only when the limit puts
    no mass on their sphere.
    """
    space = limit.space
    start, tail = _tail(sequence, tail_fraction)
    if any(m.space is not space for m in tail):
        raise ValueError("sequence and limit live on different spaces")
    if closed_sets is None or open_sets is None or functions is None:
        dc, do, df = default_families(space, [limit, *tail])
        closed_sets = dc if closed_sets is None else closed_sets
        open_sets = do if open_sets is None else open_sets
        functions = df if functions is None else functions
    if continuity_sets is None:
        continuity_sets = list(open_sets)
    W = np.array([m.weights for m in tail])
    gaps, fam = {}, {}

    vals = [abs(np.array([pair(f, m) for m in tail]) - pair(f, limit)).max() for f in functions]
    gaps["lipschitz_functions"] = float(max(vals, default=0.0))
    fam["lipschitz_functions"] = [f.name for f in functions]

    g = 0.0
    for F in closed_sets:
        idx = _set_indices(space, F)
        g = max(g, float(W[:, idx].sum(axis=1).max() - limit.of(idx)))
    gaps["closed_sets"] = max(0.0, g)
    fam["closed_sets"] = [_describe_set(space, F) for F in closed_sets]

    g = 0.0
    for G in open_sets:
        idx = _set_indices(space, G)
        g = max(g, float(limit.of(idx) - W[:, idx].sum(axis=1).min()))
    gaps["open_sets"] = max(0.0, g)
    fam["open_sets"] = [_describe_set(space, G) for G in open_sets]

    g, used = 0.0, []
    for A in continuity_sets:
        if isinstance(A, Ball) and A.radius > 0 and boundary_mass(limit, A.center, A.radius) > SPHERE_TOL:
            continue
        idx = _set_indices(space, A)
        g = max(g, float(np.abs(W[:, idx].sum(axis=1) - limit.of(idx)).max()))
        used.append(_describe_set(space, A))
    gaps["continuity_sets"] = g
    fam["continuity_sets"] = used

    verdicts = {k: gaps[k] <= tol for k in CRITERIA}
    return WeakConvergenceReport(verdicts, gaps, fam, start, tol)


@dataclass
class LbsConvergenceReport:
    passed: bool
    worst_gap: float
    gaps: dict[str, float]


def lbs_convergence_check(sequence: Sequence[Measure], limit: Measure, epsilons: Sequence[float],
                          closed_sets=None, tail_fraction: float = 0.5,
                          tol: float = LIMIT_TOL) -> LbsConvergenceReport:
    """Weak-convergence verdict from tents ``f_{F,eps}`` alone.

    Tents over bounded closed sets are non-negative, Lipschitz and boundedly
    supported, and their convergence already forces the closed-set criterion,
    hence weak convergence.
    """
    space = limit.space
    _, tail = _tail(sequence, tail_fraction)
    if any(e <= 0 for e in epsilons):
        raise ValueError("epsilons must be positive")
    if closed_sets is None:
        closed_sets = [[space.labels[i]] for i in limit.support_indices()]
        closed_sets += [[space.labels[i]] for m in tail[-1:] for i in m.support_indices()]
    gaps = {}
    for F in closed_sets:
        idx = _set_indices(space, F)
        if len(idx) == 0:
            continue
        keys = [space.labels[i] for i in idx]
        for eps in epsilons:
            f = make_tent(keys, eps, space)
            g = max(abs(pair(f, m) - pair(f, limit)) for m in tail)
            gaps[f"{_describe_set(space, F)},eps={eps:g}"] = float(g)
    worst = max(gaps.values(), default=0.0)
    return LbsConvergenceReport(worst <= tol, worst, gaps)
