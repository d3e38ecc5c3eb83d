"""Metric state spaces: finite labelled point sets and half-line flow domains."""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

FINITE = "FinitePoints"
HALF_LINE = "HalfLineFlow"

# Flow domains are truncated here; evaluations beyond are rejected.
DEFAULT_FLOW_HORIZON = 1000.0


@dataclass(frozen=True)
class StatePoint:
    label: str
    coordinate: float | None = None


@dataclass(frozen=True, eq=False)
class MetricSpace:
    """A finite metric space or a half line ``[lower_bound, upper_bound]``.

    Finite spaces carry either coordinates (Euclidean metric on the real
    line) or an explicit distance matrix. ``compact_model`` records whether
    the countable space being truncated is itself compact (true for
    ``{0} u {1/n}``, false for sets containing all integers) and
    ``limit_point`` names the accumulation point of that countable set.
    """

    kind: str
    points: tuple[StatePoint, ...] = ()
    metric_matrix: np.ndarray | None = None
    lower_bound: float = 1.0
    upper_bound: float = DEFAULT_FLOW_HORIZON
    compact_model: bool = True
    limit_point: str | None = None
    _index: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in (FINITE, HALF_LINE):
            raise ValueError(f"unknown space kind {self.kind!r}")
        if self.kind == HALF_LINE:
            if not self.lower_bound < self.upper_bound:
                raise ValueError("flow space needs lower_bound < upper_bound")
            return
        if not self.points:
            raise ValueError("finite space needs at least one point")
        labels = [p.label for p in self.points]
        if len(set(labels)) != len(labels):
            raise ValueError("point labels must be unique")
        self._index.update({lab: i for i, lab in enumerate(labels)})
        if self.metric_matrix is None:
            coords = [p.coordinate for p in self.points]
            if any(c is None or not np.isfinite(c) for c in coords):
                raise ValueError("coordinate-induced space needs finite coordinates")
            if len(set(coords)) != len(coords):
                raise ValueError("coordinates must be distinct")
        else:
            m = np.asarray(self.metric_matrix, dtype=float)
            object.__setattr__(self, "metric_matrix", m)
            _check_metric(m, len(self.points))

    @property
    def size(self) -> int:
        return len(self.points)

    @property
    def is_finite(self) -> bool:
        return self.kind == FINITE

    @cached_property
    def coordinates(self) -> np.ndarray | None:
        if self.metric_matrix is not None or not self.is_finite:
            return None
        return np.array([p.coordinate for p in self.points], dtype=float)

    @cached_property
    def labels(self) -> list[str]:
        return [p.label for p in self.points]

    @cached_property
    def _sorted_coords(self):
        order = np.argsort(self.coordinates)
        return order, self.coordinates[order]

    def index_of(self, key) -> int:
        """Resolve a label, a StatePoint, an index-free coordinate or a
        rational string such as ``"1/3"`` to a point index."""
        self._require_finite()
        if isinstance(key, StatePoint):
            key = key.label
        if isinstance(key, str):
            if key in self._index:
                return self._index[key]
            try:
                key = float(Fraction(key.strip()))
            except (ValueError, ZeroDivisionError):
                raise KeyError(f"unknown point label {key!r}") from None
        if isinstance(key, (int, np.integer)) and not isinstance(key, bool):
            key = float(key)
        if isinstance(key, (float, np.floating)):
            if self.coordinates is None:
                raise KeyError("space has no coordinates; refer to points by label")
            order, sc = self._sorted_coords
            j = int(np.searchsorted(sc, key))
            for cand in (j - 1, j):
                if 0 <= cand < len(sc) and abs(sc[cand] - key) <= 1e-12 * max(1.0, abs(key)):
                    return int(order[cand])
            raise KeyError(f"no point with coordinate {key!r}")
        raise KeyError(f"cannot resolve point {key!r}")

    def point(self, key) -> StatePoint:
        return self.points[self.index_of(key)]

    def indices(self, keys: Iterable) -> np.ndarray:
        return np.array([self.index_of(k) for k in keys], dtype=int)

    def distance(self, x, y) -> float:
        if self.kind == HALF_LINE:
            a, b = float(x), float(y)
            for v in (a, b):
                if not self.contains(v):
                    raise KeyError(f"{v} outside [{self.lower_bound}, {self.upper_bound}]")
            return abs(a - b)
        i, j = self.index_of(x), self.index_of(y)
        if self.metric_matrix is not None:
            return float(self.metric_matrix[i, j])
        return abs(self.points[i].coordinate - self.points[j].coordinate)

    def distances_from(self, z) -> np.ndarray:
        """Vector of distances from ``z`` to every point."""
        self._require_finite()
        i = self.index_of(z)
        if self.metric_matrix is not None:
            return self.metric_matrix[i].copy()
        return np.abs(self.coordinates - self.coordinates[i])

    def distance_submatrix(self, idx: np.ndarray) -> np.ndarray:
        self._require_finite()
        idx = np.asarray(idx, dtype=int)
        if self.metric_matrix is not None:
            return self.metric_matrix[np.ix_(idx, idx)]
        c = self.coordinates[idx]
        return np.abs(c[:, None] - c[None, :])

    def ball_members(self, z, r: float) -> np.ndarray:
        """Indices of the open ball ``{x : rho(x, z) < r}``."""
        if r <= 0:
            raise ValueError("ball radius must be positive")
        if self.kind == HALF_LINE:
            raise TypeError("flow spaces do not enumerate balls; use contains()")
        return np.flatnonzero(self.distances_from(z) < r)

    def contains(self, x: float) -> bool:
        self._require_flow()
        return self.lower_bound <= x <= self.upper_bound

    def isolation_radius(self, z) -> float:
        """Distance from ``z`` to its nearest other point (inf if alone)."""
        d = self.distances_from(z)
        d[self.index_of(z)] = np.inf
        return float(d.min())

    def min_separation(self) -> float:
        if self.size < 2:
            return np.inf
        if self.coordinates is not None:
            return float(np.diff(np.sort(self.coordinates)).min())
        m = self.metric_matrix + np.diag(np.full(self.size, np.inf))
        return float(m.min())

    def _require_finite(self):
        if self.kind != FINITE:
            raise TypeError("operation needs a finite point space")

    def _require_flow(self):
        if self.kind != HALF_LINE:
            raise TypeError("operation needs a half-line flow space")


def _check_metric(m: np.ndarray, n: int, tol: float = 1e-12) -> None:
    if m.shape != (n, n):
        raise ValueError(f"metric matrix must be {n}x{n}")
    if not np.allclose(m, m.T, atol=tol, rtol=0):
        raise ValueError("metric matrix is not symmetric")
    if np.any(np.abs(np.diag(m)) > tol):
        raise ValueError("metric matrix must have a zero diagonal")
    off = m[~np.eye(n, dtype=bool)]
    if np.any(off <= 0):
        raise ValueError("off-diagonal distances must be strictly positive")
    # d(i,k) <= d(i,j) + d(j,k) for all triples
    viol = m[:, None, :] - (m[:, :, None] + m[None, :, :])
    if np.any(viol > tol * max(1.0, float(m.max()))):
        raise ValueError("metric matrix violates the triangle inequality")


def _frac_label(num: int, den: int) -> str:
    return str(num) if den == 1 else f"{num}/{den}"


def coordinate_space(values: Sequence[float], labels: Sequence[str] | None = None,
                     compact_model: bool = True, limit_point: str | None = None) -> MetricSpace:
    """Finite subset of the real line with the Euclidean metric."""
    if labels is None:
        labels = [repr(float(v)) for v in values]
    pts = tuple(StatePoint(str(lab), float(v)) for lab, v in zip(labels, values))
    return MetricSpace(FINITE, pts, compact_model=compact_model, limit_point=limit_point)


def explicit_space(labels: Sequence[str], matrix) -> MetricSpace:
    pts = tuple(StatePoint(str(lab)) for lab in labels)
    return MetricSpace(FINITE, pts, metric_matrix=np.asarray(matrix, dtype=float))


def flow_space(lower_bound: float = 1.0, upper_bound: float = DEFAULT_FLOW_HORIZON) -> MetricSpace:
    return MetricSpace(HALF_LINE, lower_bound=lower_bound, upper_bound=upper_bound,
                       compact_model=False)


def example_space(family: str, truncation: int) -> MetricSpace:
    """State sets of the two countable examples, truncated at ``truncation``.

    ``example1``: ``{0} u {1/n : n <= N}``.
    ``example2``: ``{0, 1} u {n : 2 <= n <= N} u {1/n : 2 <= n <= N}``.
    Points are ordered by coordinate and labelled ``"0"``, ``"1/3"``, ``"7"``.
    """
    if family == "example1":
        if truncation < 1:
            raise ValueError("example1 truncation must be >= 1")
        fracs = [(0, 1)] + [(1, n) for n in range(1, truncation + 1)]
        compact = True
    elif family == "example2":
        if truncation < 2:
            raise ValueError("example2 truncation must be >= 2")
        fracs = [(0, 1), (1, 1)]
        fracs += [(n, 1) for n in range(2, truncation + 1)]
        fracs += [(1, n) for n in range(2, truncation + 1)]
        compact = False
    else:
        raise ValueError(f"unknown example family {family!r}")
    fracs.sort(key=lambda p: p[0] / p[1])
    return coordinate_space([a / b for a, b in fracs], [_frac_label(a, b) for a, b in fracs],
                            compact_model=compact, limit_point="0")
