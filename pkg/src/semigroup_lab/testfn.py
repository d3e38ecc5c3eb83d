"""Bounded test functions tagged with their function class.

Classes are ``Cb`` (bounded continuous), ``Lb`` (bounded Lipschitz) and
``Lbs`` (non-negative bounded Lipschitz with bounded support).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .space import MetricSpace

CB, LB, LBS = "Cb", "Lb", "Lbs"
CLASSES = (CB, LB, LBS)

# Limit-based checks: gaps below this fraction of the sup norm count as zero.
LIMIT_TOL = 1e-3


@dataclass(frozen=True, eq=False)
class TestFunction:
    """Evaluation rule plus the certificates that place it in a class.

    Exactly one rule source is used, in this order: ``table`` (label to
    value), ``on_coords`` (vectorised map of coordinates), ``on_space``
    (map from a finite space to a value vector).
    """

    __test__ = False  # keep pytest from collecting this class

    name: str
    class_tag: str
    on_coords: Callable[[np.ndarray], np.ndarray] | None = None
    on_space: Callable[[MetricSpace], np.ndarray] | None = None
    table: Mapping[str, float] | None = None
    sup_bound: float | None = None
    lipschitz_constant: float | None = None
    support_center: float | None = None
    support_bound: float | None = None
    constant: float | None = field(default=None)

    def __post_init__(self):
        if self.class_tag not in CLASSES:
            raise ValueError(f"unknown function class {self.class_tag!r}")
        if self.on_coords is None and self.on_space is None and self.table is None:
            raise ValueError("test function needs an evaluation rule")

    def __call__(self, x):
        """Evaluate at real coordinate(s)."""
        if self.on_coords is None:
            raise TypeError(f"{self.name} is not defined on coordinates")
        arr = np.asarray(x, dtype=float)
        out = np.asarray(self.on_coords(arr), dtype=float)
        return float(out) if out.ndim == 0 else out

    def values(self, space: MetricSpace, idx=None) -> np.ndarray:
        """Values at the points of a finite space (optionally a subset)."""
        if self.table is not None:
            labels = space.labels if idx is None else [space.labels[i] for i in idx]
            try:
                return np.array([self.table[lab] for lab in labels], dtype=float)
            except KeyError as err:
                raise KeyError(f"{self.name} undefined at point {err.args[0]!r}") from None
        if self.on_coords is not None and space.coordinates is not None:
            c = space.coordinates if idx is None else space.coordinates[idx]
            return np.asarray(self.on_coords(c), dtype=float) * np.ones_like(c)
        if self.on_space is not None:
            v = np.asarray(self.on_space(space), dtype=float)
            return v if idx is None else v[idx]
        raise TypeError(f"{self.name} cannot be evaluated on this space")

    def sup_norm(self, space: MetricSpace | None = None) -> float:
        if self.sup_bound is not None:
            return float(self.sup_bound)
        if space is None or not space.is_finite:
            raise ValueError(f"{self.name} has no declared sup bound")
        return float(np.max(np.abs(self.values(space))))

    def scaled(self, c: float) -> "TestFunction":
        """The function ``c * f`` with certificates scaled accordingly."""
        if c <= 0:
            raise ValueError("scale must be positive")
        tab = None if self.table is None else {k: c * v for k, v in self.table.items()}
        oc = None if self.on_coords is None else (lambda x, g=self.on_coords: c * g(x))
        osp = None if self.on_space is None else (lambda s, g=self.on_space: c * g(s))
        return TestFunction(
            f"{c}*{self.name}", self.class_tag, oc, osp, tab,
            None if self.sup_bound is None else c * self.sup_bound,
            None if self.lipschitz_constant is None else c * self.lipschitz_constant,
            self.support_center, self.support_bound,
            None if self.constant is None else c * self.constant)


def constant(c: float = 1.0) -> TestFunction:
    return TestFunction(f"const({c})", LBS if c >= 0 else LB,
                        on_coords=lambda x: np.full_like(x, c, dtype=float),
                        on_space=lambda s: np.full(s.size, c, dtype=float),
                        sup_bound=abs(c), lipschitz_constant=0.0, constant=c)


def identity() -> TestFunction:
    """``f(x) = x``; bounded on every finite truncation."""
    return TestFunction("identity", LB, on_coords=lambda x: x, lipschitz_constant=1.0)


def capped_identity() -> TestFunction:
    """``f(x) = min(max(x, -1), 1)``: identity on [0, 1], constant 1 on the integers."""
    return TestFunction("capped_identity", LB, on_coords=lambda x: np.clip(x, -1.0, 1.0),
                        sup_bound=1.0, lipschitz_constant=1.0)


def tabulated(values: Mapping[str, float], name: str = "table") -> TestFunction:
    """Function given point by point; continuity is not certified."""
    vals = {str(k): float(v) for k, v in values.items()}
    return TestFunction(name, CB, table=vals, sup_bound=max(abs(v) for v in vals.values()))


def make_tent(F, epsilon: float, space: MetricSpace | None = None) -> TestFunction:
    """Tent ``f(x) = max(0, 1 - dist(x, F) / epsilon)``.

    ``F`` is either an interval ``(a, b)`` of the real line or a collection
    of points (labels or coordinates, resolved against ``space`` when given).
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if isinstance(F, tuple) and len(F) == 2 and all(isinstance(v, (int, float)) for v in F):
        a, b = float(F[0]), float(F[1])
        if a > b:
            raise ValueError("interval end before start")

        def dist(x):
            return np.maximum(0.0, np.maximum(a - x, x - b))

        name = f"tent([{a},{b}],{epsilon})"
        center, half = (a + b) / 2, (b - a) / 2
        on_space = None
    else:
        members = list(F)
        if not members:
            raise ValueError("tent needs a nonempty set F")
        if space is not None and space.coordinates is None:
            idx = space.indices(members)

            def on_space(s, idx=idx):
                if s is not space:
                    raise ValueError("tent was built for another space")
                return np.maximum(0.0, 1.0 - space.metric_matrix[:, idx].min(axis=1) / epsilon)

            diam = float(space.distance_submatrix(idx).max())
            return TestFunction(f"tent({members},{epsilon})", LBS, on_space=on_space,
                                sup_bound=1.0, lipschitz_constant=1.0 / epsilon,
                                support_bound=diam + epsilon)
        if space is not None:
            coords = space.coordinates[space.indices(members)]
        else:
            coords = np.array([float(m) for m in members], dtype=float)
        coords = np.sort(coords)

        def dist(x):
            x = np.asarray(x, dtype=float)
            j = np.clip(np.searchsorted(coords, x), 1, len(coords) - 1) if len(coords) > 1 else None
            if j is None:
                return np.abs(x - coords[0])
            return np.minimum(np.abs(x - coords[j - 1]), np.abs(x - coords[j]))

        name = f"tent({[float(c) for c in coords]},{epsilon})"
        center = (coords[0] + coords[-1]) / 2
        half = (coords[-1] - coords[0]) / 2
        on_space = None
    return TestFunction(name, LBS, on_coords=lambda x: np.maximum(0.0, 1.0 - dist(x) / epsilon),
                        on_space=on_space, sup_bound=1.0, lipschitz_constant=1.0 / epsilon,
                        support_center=center, support_bound=half + epsilon)


def indicator_smoothed(a: float, b: float, epsilon: float) -> TestFunction:
    """Continuous stand-in for the indicator of ``[a, b]`` (a tent over the interval)."""
    return make_tent((a, b), epsilon)


def make_triangular_wave() -> TestFunction:
    """1-periodic wave on ``[1, inf)``: rises 0 -> 1 on [1, 1.5], falls back on [1.5, 2]."""

    def wave(x):
        x = np.asarray(x, dtype=float)
        if np.any(x < 1.0):
            raise ValueError("triangular wave lives on [1, inf)")
        y = np.mod(x - 1.0, 1.0)
        return np.where(y < 0.5, 2.0 * y, 2.0 * (1.0 - y))

    return TestFunction("triangle_wave", LB, on_coords=wave, sup_bound=1.0, lipschitz_constant=2.0)


def spikes() -> TestFunction:
    """Narrowing spikes ``max(0, 1 - n^2 |x - n|)`` at each integer n >= 2.

    Bounded and continuous but not uniformly continuous, so it separates
    equicontinuity in ``Cb`` from equicontinuity in ``Lb``.
    """

    def f(x):
        x = np.asarray(x, dtype=float)
        n = np.maximum(np.rint(x), 2.0)
        return np.maximum(0.0, 1.0 - n * n * np.abs(x - n))

    return TestFunction("spikes", CB, on_coords=f, sup_bound=1.0)


@dataclass(frozen=True)
class ClassCheck:
    passed: bool
    violation: str | None = None


def validate_class(f: TestFunction, space: MetricSpace, sample=None, tol: float = 1e-12) -> ClassCheck:
    """Check the declared certificates of ``f`` on a finite sample of points.

    ``sample`` is a collection of point keys of a finite space, or of
    coordinates for a flow space; ``None`` means every point.
    """
    if space.is_finite:
        idx = np.arange(space.size) if sample is None else space.indices(sample)
        vals = f.values(space, idx)
        d = space.distance_submatrix(idx)
    else:
        xs = np.asarray(sorted(sample), dtype=float)
        vals = np.asarray(f(xs), dtype=float)
        d = np.abs(xs[:, None] - xs[None, :])
    if len(vals) == 0:
        raise ValueError("sample must be nonempty")
    if f.sup_bound is not None and np.max(np.abs(vals)) > f.sup_bound + tol:
        return ClassCheck(False, f"sup bound {f.sup_bound} exceeded: {np.max(np.abs(vals))}")
    if f.lipschitz_constant is not None:
        slack = f.lipschitz_constant * d + tol - np.abs(vals[:, None] - vals[None, :])
        if np.any(slack < 0):
            i, j = np.unravel_index(np.argmin(slack), slack.shape)
            ratio = abs(vals[i] - vals[j]) / d[i, j]
            return ClassCheck(False, f"Lipschitz constant {f.lipschitz_constant} violated: slope {ratio}")
    elif f.class_tag in (LB, LBS):
        return ClassCheck(False, "Lipschitz class declared without a Lipschitz constant")
    if f.class_tag == LBS:
        if np.any(vals < -tol):
            return ClassCheck(False, "negative value in Lbs function")
        if f.support_bound is None:
            return ClassCheck(False, "Lbs function without a support bound")
        if f.support_center is not None:
            if space.is_finite and space.coordinates is not None:
                c = space.coordinates[idx]
            elif not space.is_finite:
                c = xs
            else:
                c = None
            if c is not None:
                outside = np.abs(c - f.support_center) > f.support_bound + tol
                if np.any(np.abs(vals[outside]) > tol):
                    return ClassCheck(False, "nonzero value outside the declared support")
    if space.is_finite and space.limit_point is not None and f.lipschitz_constant is None:
        # continuity at the accumulation point: gaps along the closest points
        # must shrink roughly with the distance unless already negligible
        z = space.index_of(space.limit_point)
        dz = space.distances_from(space.limit_point)
        dz[z] = np.inf
        near = np.argsort(dz)[:16]
        scale = max(1.0, f.sup_norm(space))
        gaps = np.abs(f.values(space, near) - f.values(space, [z])[0])
        if len(near) >= 2 and np.min(gaps) > LIMIT_TOL * scale:
            slope = np.polyfit(np.log(dz[near]), np.log(gaps), 1)[0]
            if slope < 0.1:
                return ClassCheck(False, f"no continuity at limit point {space.limit_point}: gap {gaps[0]}")
    return ClassCheck(True)


def resolve(spec: str, space: MetricSpace | None = None) -> TestFunction:
    """Registry lookup used by the command line.

    Accepted forms: ``identity``, ``capped_identity``, ``triangle_wave``,
    ``spikes``, ``const(c)``, ``tent(a:b,eps)`` for an interval,
    ``tent(p;q;...,eps)`` for a point set, ``indicator_smoothed(a,b,eps)``,
    and ``label=value;label=value`` tables.
    """
    s = spec.strip()
    simple = {"identity": identity, "capped_identity": capped_identity,
              "triangle_wave": make_triangular_wave, "spikes": spikes}
    if s in simple:
        return simple[s]()
    if "=" in s and "(" not in s:
        pairs = [item.split("=", 1) for item in s.split(";") if item.strip()]
        return tabulated({k.strip(): float(v) for k, v in pairs})
    if s.endswith(")") and "(" in s:
        head, body = s[:-1].split("(", 1)
        args = [a.strip() for a in body.split(",")]
        head = head.strip()
        if head == "const" and len(args) == 1:
            return constant(float(args[0]))
        if head == "indicator_smoothed" and len(args) == 3:
            return indicator_smoothed(*map(_num, args))
        if head == "tent" and len(args) == 2:
            eps = _num(args[1])
            if ":" in args[0]:
                a, b = args[0].split(":")
                return make_tent((_num(a), _num(b)), eps)
            members = [m.strip() for m in args[0].split(";")]
            if space is None:
                return make_tent([_num(m) for m in members], eps)
            return make_tent(members, eps, space)
    raise ValueError(f"unknown test function {spec!r}")


def _num(text: str) -> float:
    from fractions import Fraction
    return float(Fraction(text.strip())) if "/" in text else float(text)
