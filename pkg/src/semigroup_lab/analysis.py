"""Numerical certification of stability, continuity and equicontinuity properties.

Every check returns a three-valued verdict. ``supported`` only ever means
"holds at the stated grid resolution"; ``refuted`` carries a witness.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .measure import Ball, Measure, bl_distance, pair
from .semigroup import FlowModel, GeneratorModel, SemigroupModel
from .space import MetricSpace
from .testfn import LIMIT_TOL, TestFunction
from .zoo import INCONCLUSIVE, REFUTED, SUPPORTED

T_MAX = 50.0
ALGEBRAIC_TOL = 1e-9
# below this many approach points a ball around an accumulation point says nothing
MIN_BALL_POINTS = 8
MAX_APPROACH = 200
TAIL_POLICIES = ("stability-envelope", "none")


@dataclass(frozen=True)
class Witness:
    x: str
    t: float
    gap: float


@dataclass(frozen=True, eq=False)
class ModulusReport:
    """Outcome of one property check.

    ``rows`` holds one ``(x, t, gap)`` record per probe for report files.
    ``grid_only`` is set when no tail bound beyond the time grid was used;
    ``grid_refuted`` marks refutations that hold on every grid pair but are
    not a proof for arbitrarily large times.
    """

    property: str
    function: str
    function_class: str
    z: str
    verdict: str
    max_gap: float
    epsilon: float | None = None
    delta: float | None = None
    tau: float | None = None
    witness: Witness | None = None
    rows: tuple = ()
    resolution: str = ""
    grid_only: bool = False
    grid_refuted: bool = False
    notes: str = ""

    def summary_row(self) -> list:
        return [self.property, self.function, self.z, self.verdict, self.epsilon,
                self.delta, self.tau, self.max_gap]


@dataclass(frozen=True, eq=False)
class StabilityReport:
    invariant: Measure
    initials: tuple[str, ...]
    times: np.ndarray
    curves: np.ndarray
    rate: float | None
    constant: float | None
    verdict: str
    tol: float

    @property
    def final(self) -> np.ndarray:
        return self.curves[:, -1]

    def envelope(self, t) -> np.ndarray | None:
        if self.rate is None:
            return None
        return self.constant * np.exp(-self.rate * np.asarray(t, dtype=float))


# -- grids and approach sequences -----------------------------------------------

def default_time_grid(t_max: float = T_MAX, per_decade: int = 64, t_min: float = 1e-4) -> np.ndarray:
    """``0`` followed by a geometric grid with ``per_decade`` points per decade."""
    decades = np.log10(t_max / t_min)
    n = int(np.ceil(decades * per_decade)) + 1
    return np.concatenate([[0.0], np.geomspace(t_min, t_max, n)])


def _thin(values: np.ndarray, limit: int) -> np.ndarray:
    """At most ``limit`` entries, evenly spaced, always keeping both ends."""
    if len(values) <= limit:
        return values
    keep = np.unique(np.rint(np.linspace(0, len(values) - 1, limit)).astype(int))
    return values[keep]


def _label(space: MetricSpace, x) -> str:
    if space.is_finite:
        return space.labels[int(x)]
    return repr(float(x))


def is_accumulation_point(space: MetricSpace, z) -> bool:
    """Whether ``z`` is a limit of other points in the model being truncated."""
    if not space.is_finite:
        return True
    return space.limit_point is not None and space.index_of(z) == space.index_of(space.limit_point)


def approach_sequences(model: SemigroupModel, z, count: int = MAX_APPROACH) -> list[np.ndarray]:
    """Natural sequences converging to ``z``, each ordered far to near.

    Finite spaces give point indices sorted by distance (empty when ``z`` is
    isolated in the underlying countable space). Flows give coordinates
    ``z (1 + 1/(2k))``, ``z + 1/k`` and ``z - 1/k``.
    """
    space = model.space
    if space.is_finite:
        if not is_accumulation_point(space, z):
            return [np.array([], dtype=int)]
        d = space.distances_from(z)
        iz = space.index_of(z)
        order = np.argsort(-d, kind="stable")
        order = order[order != iz]
        return [_thin(order, count)]
    z = float(z)
    k = np.arange(1, count + 1, dtype=float)
    seqs = [z * (1 + 1 / (2 * k)), z + 1 / k, z - 1 / k]
    out = []
    for s in seqs:
        s = s[(s >= space.lower_bound) & (s <= space.upper_bound) & (s != z)]
        if len(s):
            out.append(s)
    return out


def _times_for(model: SemigroupModel, z, xs, times, lo: float = 0.0, hi: float | None = None) -> np.ndarray:
    grid = default_time_grid() if times is None else np.asarray(times, dtype=float)
    crit = np.asarray(model.critical_times(z, xs), dtype=float)
    t = np.unique(np.concatenate([grid, crit]))
    t = t[t >= lo]
    if hi is not None:
        t = t[t <= hi]
    return t


def _scale(f: TestFunction, model: SemigroupModel, xs=None) -> float:
    space = model.space
    if space.is_finite:
        s = float(np.max(np.abs(f.values(space))))
    elif f.sup_bound is not None:
        s = float(f.sup_bound)
    else:
        s = float(np.max(np.abs(f(np.asarray(xs, dtype=float))))) if xs is not None else 1.0
    return s if s > 0 else 1.0


def _gap_table(model: SemigroupModel, f: TestFunction, z, xs, times) -> np.ndarray:
    """``|P(t)f(x) - P(t)f(z)|`` with shape ``[len(times), len(xs)]``; NaN outside a flow domain."""
    if isinstance(model, FlowModel):
        vals = model.dual_masked(f, times, np.concatenate([[float(z)], np.asarray(xs, dtype=float)]))
    else:
        idx = np.concatenate([[model.space.index_of(z)], np.asarray(xs, dtype=int)])
        vals = model.dual_on_grid(f, times, idx)
    return np.abs(vals[:, 1:] - vals[:, :1])


def _is_constant(f: TestFunction, model: SemigroupModel) -> bool:
    if f.constant is not None:
        return True
    if model.space.is_finite:
        v = f.values(model.space)
        return bool(np.all(v == v[0]))
    return False


# -- stability -------------------------------------------------------------------

def check_asymptotic_stability(model: SemigroupModel, initials: Sequence[Measure], times=None,
                               tol: float = 1e-6, invariant: Measure | None = None) -> StabilityReport:
    """Decay of ``bl(mu P(t), mu*)`` for each initial measure.

    Supported when every final distance is below ``tol``; refuted when the
    generator has more than one invariant probability; inconclusive otherwise.
    """
    inv = invariant if invariant is not None else model.invariant()
    if inv is None:
        if isinstance(model, GeneratorModel):
            model.invariant()
            if model._inv is not None and model._inv.nullity > 1:
                return StabilityReport(None, tuple(), np.array([]), np.zeros((0, 0)), None, None,
                                       REFUTED, tol)
        raise ValueError("no invariant measure known for this model")
    times = np.linspace(0.0, 30.0, 61) if times is None else np.sort(np.asarray(times, dtype=float))
    curves = np.array([[bl_distance(model.evolve(mu, t), inv) for t in times] for mu in initials])
    rate = constant = None
    usable = curves > 1e-14
    if np.all(usable) and len(times) >= 2 and np.ptp(times) > 0:
        X = np.column_stack([np.ones(curves.size), np.tile(times, len(initials))])
        coef, *_ = np.linalg.lstsq(X, np.log(curves).ravel(), rcond=None)
        if coef[1] < 0:
            rate = float(-coef[1])
            constant = float(np.max(curves * np.exp(rate * times)))
    elif np.any(usable) and len(times) >= 2:
        # fit only where the curves are above the numerical floor
        tt, cc = np.broadcast_to(times, curves.shape)[usable], curves[usable]
        if np.ptp(tt) > 0:
            slope = np.polyfit(tt, np.log(cc), 1)[0]
            if slope < 0:
                rate = float(-slope)
                constant = float(np.max(np.where(usable, curves, 0.0) * np.exp(rate * times)))
                constant = max(constant, float(np.max(curves)))
    verdict = SUPPORTED if np.all(curves[:, -1] < tol) else INCONCLUSIVE
    labels = tuple(_describe_measure(mu) for mu in initials)
    return StabilityReport(inv, labels, times, curves, rate, constant, verdict, tol)


def _describe_measure(mu: Measure) -> str:
    return ";".join(f"{lab}={w:.6g}" for lab, w in mu.as_pairs())


# -- continuity ------------------------------------------------------------------

# exponent p in gap ~ scale^p over the tail of a sequence
TREND_VANISHING = 0.5
TREND_FLAT = 0.1


def _tail(values: np.ndarray) -> np.ndarray:
    """Nearest quarter of a far-to-near sequence (at least two entries when possible)."""
    n = len(values)
    return values[n - max(2, n // 4):] if n >= 2 else values


def _trend(gaps: np.ndarray, scale: np.ndarray) -> float:
    g, s = _tail(gaps), _tail(scale)
    if len(g) < 2 or np.any(g <= 0) or np.any(s <= 0) or np.ptp(np.log(s)) == 0:
        return 0.0
    return float(np.polyfit(np.log(s), np.log(g), 1)[0])


def _tail_verdict(gaps: np.ndarray, tol: float, scale: np.ndarray | None = None) -> str:
    """Limit verdict for a gap sequence ordered far to near (``scale`` decreasing).

    Supported when the tail is within ``tol`` or still shrinks at least like
    ``scale^0.5``; refuted when it stays above ``tol`` and shrinks slower
    than ``scale^0.1``; otherwise inconclusive.
    """
    tail = _tail(gaps)
    if len(tail) == 0 or np.max(tail) <= tol:
        return SUPPORTED
    p = _trend(gaps, scale) if scale is not None else 0.0
    if np.min(tail) > tol:
        if p >= TREND_VANISHING:
            return SUPPORTED
        if p < TREND_FLAT:
            return REFUTED
    return INCONCLUSIVE


def check_feller(model: SemigroupModel, f: TestFunction, t: float, z, approach=None,
                 tol: float | None = None) -> ModulusReport:
    """``P(t) f(x_k) -> P(t) f(z)`` along an approach ordered far to near."""
    space = model.space
    if approach is None:
        xs = approach_sequences(model, z)[0]
    else:
        xs = space.indices(approach) if space.is_finite else np.asarray(approach, dtype=float)
        d = (space.distances_from(z)[xs] if space.is_finite else np.abs(xs - float(z)))
        if np.any(d == 0) or np.any(np.diff(d) > 0):
            raise ValueError("approach must move strictly towards z, far to near")
    tol = LIMIT_TOL * _scale(f, model, xs) if tol is None else tol
    zl = str(z) if not space.is_finite else space.labels[space.index_of(z)]
    if len(xs) == 0:
        return ModulusReport("feller", f.name, f.class_tag, zl, SUPPORTED, 0.0, tol,
                             resolution="isolated point")
    gaps = _gap_table(model, f, z, xs, [t])[0]
    dist = space.distances_from(z)[xs] if space.is_finite else np.abs(np.asarray(xs) - float(z))
    verdict = _tail_verdict(gaps, tol, dist)
    rows = tuple((_label(space, x), float(t), float(g)) for x, g in zip(xs, gaps))
    w = Witness(_label(space, xs[-1]), float(t), float(gaps[-1])) if verdict == REFUTED else None
    return ModulusReport("feller", f.name, f.class_tag, zl, verdict, float(np.max(_tail(gaps))),
                         tol, witness=w, rows=rows, resolution=f"{len(xs)} approach points")


def check_stochastic_continuity_zero(model: SemigroupModel, f: TestFunction, x, t_sequence=None,
                                     tol: float | None = None) -> ModulusReport:
    """``|P(t)f(x) - f(x)|`` along a decreasing sequence ``t -> 0+``."""
    ts = np.geomspace(1.0, 1e-8, 33) if t_sequence is None else np.asarray(t_sequence, dtype=float)
    if np.any(ts <= 0):
        raise ValueError("t_sequence must be positive")
    space = model.space
    if isinstance(model, FlowModel):
        vals = model.dual_masked(f, ts, [float(x)])[:, 0]
        f0 = float(f(np.array([float(x)]))[0])
        xl = repr(float(x))
    else:
        i = space.index_of(x)
        vals = model.dual_on_grid(f, ts, [i])[:, 0]
        f0 = float(f.values(space, [i])[0])
        xl = space.labels[i]
    gaps = np.abs(vals - f0)
    tol = LIMIT_TOL * _scale(f, model, [x]) if tol is None else tol
    verdict = _tail_verdict(gaps, tol, ts)
    rows = tuple((xl, float(t), float(g)) for t, g in zip(ts, gaps))
    w = Witness(xl, float(ts[-1]), float(gaps[-1])) if verdict == REFUTED else None
    return ModulusReport("stochastic_continuity_zero", f.name, f.class_tag, xl, verdict,
                         float(np.max(_tail(gaps))), tol, witness=w, rows=rows,
                         resolution=f"t down to {ts.min():.3g}")


def check_strong_continuity(model: SemigroupModel, f: TestFunction, t_sequence=None, probes=None,
                            tol: float | None = None) -> ModulusReport:
    """``sup_x |P(t)f(x) - f(x)|`` along ``t -> 0+``.

    By default the sequence is the model's critical times (largest first)
    when it registers any, so that ``t = 1/n`` meets the states that move at
    rate ``n``. A finite truncation is strongly continuous once ``t`` nears
    its fastest time scale, so only times at least four times the smallest
    critical time are used.
    """
    space = model.space
    if isinstance(model, FlowModel):
        raise TypeError("strong continuity on a flow needs explicit probes; not supported")
    idx = np.arange(space.size) if probes is None else space.indices(probes)
    if t_sequence is None:
        crit = np.asarray(model.critical_times(space.limit_point or space.labels[0], idx), dtype=float)
        crit = crit[crit > 0]
        crit = crit[crit >= 4 * crit.min()] if len(crit) else crit
        ts = np.sort(crit)[::-1] if len(crit) >= 2 else np.geomspace(1.0, 1e-8, 33)
    else:
        ts = np.asarray(t_sequence, dtype=float)
    if np.any(ts <= 0):
        raise ValueError("t_sequence must be positive")
    vals = model.dual_on_grid(f, ts, idx)
    diffs = np.abs(vals - f.values(space, idx)[None, :])
    sup = diffs.max(axis=1)
    arg = diffs.argmax(axis=1)
    tol = LIMIT_TOL * _scale(f, model) if tol is None else tol
    verdict = _tail_verdict(sup, tol, ts)
    rows = tuple((space.labels[idx[a]], float(t), float(g)) for t, a, g in zip(ts, arg, sup))
    w = Witness(space.labels[idx[arg[-1]]], float(ts[-1]), float(sup[-1])) if verdict == REFUTED else None
    return ModulusReport("strong_continuity", f.name, f.class_tag, "*", verdict,
                         float(np.min(_tail(sup))) if verdict == REFUTED else float(np.max(_tail(sup))),
                         tol, witness=w, rows=rows, resolution=f"{len(ts)} times, {len(idx)} probes")


# -- the e-property --------------------------------------------------------------

@dataclass(frozen=True)
class _Modulus:
    value: float
    grid_value: float
    tail: float
    x: object
    t: float
    n_points: int
    grid_only: bool


def _ball_points(model: SemigroupModel, z, delta: float, xs_pool=None):
    space = model.space
    if space.is_finite:
        members = space.ball_members(z, delta) if np.isfinite(delta) else np.arange(space.size)
        members = members[members != space.index_of(z)]
        if not is_accumulation_point(space, z):
            return members
        d = space.distances_from(z)[members]
        return _thin(members[np.argsort(-d, kind="stable")], MAX_APPROACH)
    pool = np.concatenate(approach_sequences(model, z, count=1000)) if xs_pool is None else xs_pool
    return pool[np.abs(pool - float(z)) < delta]


def half_oscillation(f: TestFunction, space: MetricSpace) -> float:
    """``(max f - min f) / 2``; bounds ``|<f, mu - nu>|`` per unit of total variation."""
    v = f.values(space)
    return float(np.max(v) - np.min(v)) / 2


def _tail_term(model: SemigroupModel, f: TestFunction, z, xs, t_end: float, policy: str) -> float | None:
    """Bound on the gap for all ``t > t_end``: ``osc(f)/2 (|d_x P - mu*|_1 + |d_z P - mu*|_1)``.

    Total variation contracts under a Markov operator, so the bound at
    ``t_end`` holds for every later time.
    """
    if policy == "none" or isinstance(model, FlowModel):
        return None
    inv = model.invariant()
    if inv is None:
        return None
    space = model.space
    fs = half_oscillation(f, space)
    M = model.matrix(t_end)
    iz = space.index_of(z)
    rows = np.concatenate([[iz], np.asarray(xs, dtype=int)])
    R = M[rows].toarray() if hasattr(M, "toarray") else np.asarray(M)[rows]
    tv = np.abs(R - inv.weights[None, :]).sum(axis=1)
    return fs * (tv[0] + (tv[1:].max() if len(tv) > 1 else tv[0]))


def _modulus(model, f, z, delta, tau, times, tail_policy, xs_pool=None) -> _Modulus:
    if tail_policy not in TAIL_POLICIES:
        raise ValueError(f"unknown tail policy {tail_policy!r}")
    if delta <= 0 or tau < 0:
        raise ValueError("need delta > 0 and tau >= 0")
    xs = _ball_points(model, z, delta, xs_pool)
    if len(xs) == 0:
        return _Modulus(0.0, 0.0, 0.0, None, float(tau), 0, False)
    grid = default_time_grid() if times is None else np.asarray(times, dtype=float)
    t_end = max(float(grid.max()) if len(grid) else 0.0, float(tau))
    ts = _times_for(model, z, xs, np.append(grid, [tau]), lo=tau, hi=t_end)
    table = _gap_table(model, f, z, xs, ts)
    if np.all(np.isnan(table)):
        return _Modulus(np.nan, np.nan, 0.0, None, float(tau), len(xs), True)
    flat = int(np.nanargmax(table))
    ti, xi = np.unravel_index(flat, table.shape)
    gv = float(table[ti, xi])
    tail = _tail_term(model, f, z, xs, t_end, tail_policy)
    value = gv if tail is None else max(gv, tail)
    return _Modulus(value, gv, 0.0 if tail is None else tail, xs[xi], float(ts[ti]), len(xs), tail is None)


def eprop_modulus(model: SemigroupModel, f: TestFunction, z, delta: float, tau: float = 0.0,
                  times=None, tail_policy: str = "stability-envelope") -> float:
    """``sup |P(t)f(x) - P(t)f(z)|`` over ``x`` in ``B(z, delta)`` and ``t >= tau``.

    Grid times come from ``times`` (default: :func:`default_time_grid`) plus
    the model's critical times. With ``"stability-envelope"`` a total
    variation bound covers every time beyond the grid when the model has a
    unique invariant measure; otherwise the value is grid-only.
    """
    return _modulus(model, f, z, delta, tau, times, tail_policy).value


def _default_deltas(model: SemigroupModel, z) -> np.ndarray:
    space = model.space
    if space.is_finite:
        if not is_accumulation_point(space, z):
            return np.array([space.isolation_radius(z) / 2])
        d = np.sort(space.distances_from(z))[1:]
        floor = d[min(MIN_BALL_POINTS, len(d) - 1)]
        top = max(float(d[-1]), floor)
        out = np.geomspace(top, floor, 12) if top > floor else np.array([top])
        return out
    return np.array([1.0, 0.5, 0.2, 0.1, 0.05, 0.02, 0.01])


def _enough_points(model, z, n_points: int) -> bool:
    return (not is_accumulation_point(model.space, z)) or n_points >= MIN_BALL_POINTS


def check_e_property(model: SemigroupModel, f: TestFunction, z, epsilon: float, deltas=None,
                     times=None, tail_policy: str = "stability-envelope") -> ModulusReport:
    """Equicontinuity of ``{P(t) f}`` at ``z`` over all ``t >= 0``.

    Supported when the modulus at some ``delta_j`` is below ``epsilon`` (with
    at least a few approach points in the ball when ``z`` is an accumulation
    point). Refuted when along one natural approach sequence every point in
    its nearer half has ``sup_t`` gap above ``epsilon``.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    space = model.space
    zl = space.labels[space.index_of(z)] if space.is_finite else repr(float(z))
    deltas = _default_deltas(model, z) if deltas is None else np.sort(np.asarray(deltas, dtype=float))[::-1]
    if _is_constant(f, model):
        return ModulusReport("e_property", f.name, f.class_tag, zl, SUPPORTED, 0.0, epsilon,
                             float(np.inf), 0.0, resolution="constant function")
    rows = []
    best = None
    for dlt in deltas:
        m = _modulus(model, f, z, dlt, 0.0, times, tail_policy)
        rows.append((f"delta={dlt!r}", m.t, m.value))
        if np.isfinite(m.value) and m.value < epsilon and _enough_points(model, z, m.n_points):
            best = (dlt, m)
            break
    if best is not None:
        dlt, m = best
        return ModulusReport("e_property", f.name, f.class_tag, zl, SUPPORTED, m.value, epsilon, dlt, 0.0,
                             rows=tuple(rows), grid_only=m.grid_only,
                             resolution=f"{m.n_points} ball points; grid to {_t_end(times):g}")
    witness, wrows, max_gap = _search_witness(model, f, z, epsilon, times)
    rows += wrows
    verdict = REFUTED if witness is not None else INCONCLUSIVE
    return ModulusReport("e_property", f.name, f.class_tag, zl, verdict, max_gap, epsilon, None, 0.0,
                         witness=witness, rows=tuple(rows), grid_only=True,
                         resolution="approach sequences on the time grid")


def _t_end(times) -> float:
    return T_MAX if times is None else float(np.max(times))


def _search_witness(model, f, z, epsilon, times, tau: float = 0.0):
    """First approach sequence whose nearer half all exceed ``epsilon`` in sup over ``t >= tau``."""
    best_gap = 0.0
    rows = []
    for xs in approach_sequences(model, z, count=1000 if not model.space.is_finite else MAX_APPROACH):
        if len(xs) == 0:
            continue
        ts = _times_for(model, z, xs, times, lo=tau)
        table = _gap_table(model, f, z, xs, ts)
        with np.errstate(invalid="ignore"):
            sup = np.nanmax(np.where(np.isnan(table), -np.inf, table), axis=0)
            targ = np.nanargmax(np.where(np.isnan(table), -np.inf, table), axis=0)
        near = sup[len(sup) // 2:]
        best_gap = max(best_gap, float(near.max()))
        for x, s, ti in zip(xs[len(sup) // 2:], near, targ[len(sup) // 2:]):
            rows.append((_label(model.space, x), float(ts[ti]), float(s)))
        if len(near) and np.min(near) > epsilon:
            j = len(sup) - 1
            return Witness(_label(model.space, xs[j]), float(ts[targ[j]]), float(sup[j])), rows, float(np.min(near))
    return None, rows, best_gap


def check_eventual_e_property(model: SemigroupModel, f: TestFunction, z, epsilon: float, deltas=None,
                              taus=None, times=None, tail_policy: str = "stability-envelope") -> ModulusReport:
    """Search ``(tau, delta)`` with ``sup_{x in B(z, delta), t >= tau}`` gap below ``epsilon``.

    ``tau`` runs upward and, for each, ``delta`` downward; the first hit is
    reported. If every usable pair has a grid witness above ``epsilon`` the
    verdict is ``refuted`` with ``grid_refuted`` set.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    space = model.space
    zl = space.labels[space.index_of(z)] if space.is_finite else repr(float(z))
    if _is_constant(f, model):
        return ModulusReport("eventual_e_property", f.name, f.class_tag, zl, SUPPORTED, 0.0, epsilon,
                             float(np.inf), 0.0, resolution="constant function")
    deltas = _default_deltas(model, z) if deltas is None else np.sort(np.asarray(deltas, dtype=float))[::-1]
    if taus is None:
        taus = np.array([0.0, 0.1, 0.5, 1.0, 2.0, 5.0, 10.0, 20.0])
    taus = np.sort(np.asarray(taus, dtype=float))
    if len(deltas) == 0 or len(taus) == 0:
        raise ValueError("delta and tau grids must be nonempty")
    pool = None if space.is_finite else np.concatenate(approach_sequences(model, z, count=1000))
    rows = []
    all_refuted, used = True, 0
    min_gap, witness = np.inf, None
    for tau in taus:
        if isinstance(model, FlowModel) and tau >= model.max_time(float(z)):
            continue
        for dlt in deltas:
            m = _modulus(model, f, z, dlt, tau, times, tail_policy, pool)
            rows.append((f"delta={dlt!r};tau={tau!r}", m.t, m.value))
            if not _enough_points(model, z, m.n_points) or not np.isfinite(m.value):
                continue
            used += 1
            if m.value < epsilon:
                return ModulusReport("eventual_e_property", f.name, f.class_tag, zl, SUPPORTED, m.value,
                                     epsilon, float(dlt), float(tau), rows=tuple(rows), grid_only=m.grid_only,
                                     resolution=f"{m.n_points} ball points; grid to {_t_end(times):g}")
            if m.grid_value > epsilon:
                # keep the witness from the latest tau reached
                min_gap = min(min_gap, m.grid_value)
                witness = Witness(_label(space, m.x), m.t, m.grid_value)
            else:
                all_refuted = False
    if used and all_refuted:
        return ModulusReport("eventual_e_property", f.name, f.class_tag, zl, REFUTED, float(min_gap), epsilon,
                             witness=witness, rows=tuple(rows), grid_only=True, grid_refuted=True,
                             resolution=f"{used} (delta, tau) pairs")
    finite_rows = [r[2] for r in rows if np.isfinite(r[2])]
    return ModulusReport("eventual_e_property", f.name, f.class_tag, zl, INCONCLUSIVE,
                         float(min(finite_rows)) if finite_rows else float("nan"), epsilon,
                         rows=tuple(rows), resolution=f"{used} (delta, tau) pairs")


def check_interval_e_property(model: SemigroupModel, f: TestFunction, z, T: float, approach=None,
                              tol: float | None = None, n_grid: int = 2001) -> ModulusReport:
    """``sup_{t in [0, T]} |P(t)f(x_k) - P(t)f(z)| -> 0`` along the approach."""
    if T < 0:
        raise ValueError("T must be nonnegative")
    space = model.space
    zl = space.labels[space.index_of(z)] if space.is_finite else repr(float(z))
    if approach is None:
        xs = approach_sequences(model, z)[0]
    else:
        xs = space.indices(approach) if space.is_finite else np.asarray(approach, dtype=float)
    tol = LIMIT_TOL * _scale(f, model, xs if len(xs) else None) if tol is None else tol
    if len(xs) == 0 or _is_constant(f, model):
        return ModulusReport("interval_e_property", f.name, f.class_tag, zl, SUPPORTED, 0.0, tol,
                             resolution="isolated point" if len(xs) == 0 else "constant function")
    grid = np.unique(np.concatenate([np.linspace(0.0, T, n_grid), default_time_grid(max(T, 1e-4))]))
    ts = _times_for(model, z, xs, grid, lo=0.0, hi=T)
    table = _gap_table(model, f, z, xs, ts)
    sup = np.nanmax(table, axis=0)
    targ = np.nanargmax(table, axis=0)
    dist = space.distances_from(z)[xs] if space.is_finite else np.abs(np.asarray(xs) - float(z))
    verdict = _tail_verdict(sup, tol, dist)
    rows = tuple((_label(space, x), float(ts[i]), float(g)) for x, i, g in zip(xs, targ, sup))
    w = Witness(_label(space, xs[-1]), float(ts[targ[-1]]), float(sup[-1])) if verdict == REFUTED else None
    return ModulusReport("interval_e_property", f.name, f.class_tag, zl, verdict,
                         float(np.max(_tail(sup))), tol, tau=float(T), witness=w, rows=rows,
                         resolution=f"{len(ts)} times in [0, {T:g}]")


# -- ingredients of the eventual e-property argument ----------------------------

@dataclass(frozen=True)
class LemmaResult:
    T0: float
    ball: Ball
    bound: float
    grid_only: bool


def interior_support_points(mu: Measure) -> list[str]:
    """Labels of points with a ball around them inside ``supp(mu)``.

    Isolated points of the underlying model qualify when charged; the
    accumulation point qualifies only if its whole truncated neighbourhood is.
    """
    space = mu.space
    out = []
    for i in mu.support_indices():
        lab = space.labels[i]
        if is_accumulation_point(space, lab):
            d = np.sort(space.distances_from(lab))
            r = d[min(MIN_BALL_POINTS, len(d) - 1)]
            if np.all(mu.weights[space.ball_members(lab, r)] > 0):
                out.append(lab)
        else:
            out.append(lab)
    return out


def lemma1_search(model: SemigroupModel, f: TestFunction, epsilon: float, times=None, balls=None,
                  tail_policy: str = "stability-envelope") -> LemmaResult | None:
    """First ``(T0, B)`` with ``|P(t)f(x) - <f, mu*>| <= epsilon`` on ``B`` for all ``t >= T0``.

    Candidate balls default to one per interior point of ``supp(mu*)``,
    with radius below the point's isolation radius. ``T0`` runs over the grid.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    inv = model.invariant()
    if inv is None:
        raise ValueError("no invariant measure known for this model")
    space = model.space
    if balls is None:
        balls = [Ball(lab, space.isolation_radius(lab) / 2) for lab in interior_support_points(inv)]
    grid = default_time_grid() if times is None else np.sort(np.asarray(times, dtype=float))
    target = pair(f, inv)
    members = [b.members(space) for b in balls]
    if not members:
        return None
    allx = np.unique(np.concatenate(members))
    vals = model.dual_on_grid(f, grid, allx)
    dev = np.abs(vals - target)
    tails = {}
    for t0 in grid:
        for b, mem in zip(balls, members):
            cols = np.searchsorted(allx, mem)
            grid_part = float(dev[grid >= t0][:, cols].max())
            key = id(b)
            if key not in tails:
                tails[key] = _lemma_tail(model, f, inv, mem, float(grid[-1]), tail_policy)
            tail = tails[key]
            bound = grid_part if tail is None else max(grid_part, tail)
            if bound <= epsilon:
                return LemmaResult(float(t0), b, bound, tail is None)
    return None


def _lemma_tail(model, f, inv, mem, t_end, policy):
    if policy == "none":
        return None
    fs = half_oscillation(f, model.space)
    M = model.matrix(t_end)
    R = M[mem].toarray() if hasattr(M, "toarray") else np.asarray(M)[mem]
    return fs * float(np.abs(R - inv.weights[None, :]).sum(axis=1).max())


def null_boundary_radius(mu: Measure, z, r_lo: float, r_hi: float) -> float:
    """A radius in ``[r_lo, r_hi)`` whose sphere around ``z`` carries no mass.

    Picks the midpoint of the widest gap between consecutive atom distances
    (the first one on ties).
    """
    if not r_lo < r_hi:
        raise ValueError("need r_lo < r_hi")
    space = mu.space
    if space.is_finite:
        d = space.distances_from(z)[mu.support_indices()]
    else:
        d = np.abs(mu.positions[mu.weights > 0] - float(z))
    inner = np.unique(d[(d > r_lo) & (d < r_hi)])
    cuts = np.concatenate([[r_lo], inner, [r_hi]])
    widths = np.diff(cuts)
    j = int(np.argmax(widths))
    r = float((cuts[j] + cuts[j + 1]) / 2)
    if r <= 0:
        raise ValueError("degenerate radius interval")
    return r
