"""Markov semigroups given by generators, closed-form kernels or flows."""

from __future__ import annotations

import math
import threading
from collections import OrderedDict
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import linalg, sparse

from .measure import Measure, bl_distance
from .space import MetricSpace
from .testfn import TestFunction, tabulated

POISSON_TAIL = 1e-13
# exp(-700) is still a normal double; beyond this the time step is halved
MAX_UNIFORM_RATE_TIME = 700.0
ROW_SUM_TOL = 1e-12
NEG_CLAMP = 1e-12


@dataclass(frozen=True, eq=False)
class GeneratorMatrix:
    """Conservative Q-matrix over a finite space (rows sum to zero)."""

    space: MetricSpace
    entries: np.ndarray

    def __post_init__(self):
        q = np.array(self.entries, dtype=float)
        n = self.space.size
        if q.shape != (n, n):
            raise ValueError(f"generator must be {n}x{n}")
        off = q[~np.eye(n, dtype=bool)]
        if np.any(off < 0):
            raise ValueError("off-diagonal rates must be nonnegative")
        scale = max(1.0, float(np.abs(q).max()))
        if np.any(np.abs(q.sum(axis=1)) > ROW_SUM_TOL * scale):
            raise ValueError("generator rows must sum to zero")
        q.setflags(write=False)
        object.__setattr__(self, "entries", q)

    @property
    def uniformization_rate(self) -> float:
        return float(np.max(-np.diag(self.entries), initial=0.0))


def poisson_weights(mean: float, tail: float = POISSON_TAIL) -> np.ndarray:
    """Poisson(mean) probabilities for k = 0..K, with the tail beyond K below ``tail``.

    Uses the forward recurrence ``w[k+1] = w[k] * mean / (k + 1)``, valid
    while ``exp(-mean)`` is representable.
    """
    if mean < 0:
        raise ValueError("Poisson mean must be nonnegative")
    if mean > MAX_UNIFORM_RATE_TIME:
        raise ValueError("Poisson mean too large for the direct recurrence")
    w = [math.exp(-mean)]
    acc = w[0]
    k = 0
    while 1.0 - acc > tail and k < 100000:
        w.append(w[-1] * mean / (k + 1))
        acc += w[-1]
        k += 1
        if k > mean and w[-1] < tail * 1e-3:
            break
    return np.array(w)


def matrix_exponential(Q, t: float) -> np.ndarray:
    """``exp(Q t)`` by uniformization.

    With ``lam`` the largest exit rate and ``K = I + Q / lam`` (a stochastic
    matrix), ``exp(Qt) = sum_k Poisson(lam t; k) K^k``. All terms are
    nonnegative, so the result is entrywise nonnegative by construction.
    """
    q = Q.entries if isinstance(Q, GeneratorMatrix) else np.asarray(Q, dtype=float)
    if t < 0:
        raise ValueError("time must be nonnegative")
    n = q.shape[0]
    lam = float(np.max(-np.diag(q), initial=0.0))
    if lam == 0.0 or t == 0.0:
        return np.eye(n)
    if lam * t > MAX_UNIFORM_RATE_TIME:
        half = matrix_exponential(q, t / 2.0)
        return half @ half
    K = np.eye(n) + q / lam
    np.clip(K, 0.0, None, out=K)
    w = poisson_weights(lam * t)
    P = w[0] * np.eye(n)
    power = np.eye(n)
    for wk in w[1:]:
        power = power @ K
        P += wk * power
    return P


def propagate_vector(Q, v: np.ndarray, t: float) -> np.ndarray:
    """``exp(Q t) v`` by uniformization, using matrix-vector products only."""
    q = Q.entries if isinstance(Q, GeneratorMatrix) else np.asarray(Q, dtype=float)
    lam = float(np.max(-np.diag(q), initial=0.0))
    if lam == 0.0 or t == 0.0:
        return np.array(v, dtype=float)
    if lam * t > MAX_UNIFORM_RATE_TIME:
        return propagate_vector(q, propagate_vector(q, v, t / 2.0), t / 2.0)
    K = np.clip(np.eye(len(q)) + q / lam, 0.0, None)
    w = poisson_weights(lam * t)
    term = np.array(v, dtype=float)
    out = w[0] * term
    for wk in w[1:]:
        term = K @ term
        out += wk * term
    return out


def taylor_exponential(Q, t: float, terms: int = 60) -> np.ndarray:
    """Truncated power series ``sum_{k <= terms} (Qt)^k / k!``; a reference for small ``|Q| t``."""
    q = Q.entries if isinstance(Q, GeneratorMatrix) else np.asarray(Q, dtype=float)
    A = q * t
    term = np.eye(q.shape[0])
    out = term.copy()
    for k in range(1, terms + 1):
        term = term @ A / k
        out += term
    return out


class SemigroupModel:
    """Common interface of the three semigroup representations.

    Finite-space models expose ``matrix(t)``, a row-stochastic transition
    matrix (dense ``ndarray`` or ``scipy.sparse`` CSR) indexed by points.
    """

    kind = "abstract"
    space: MetricSpace

    def matrix(self, t: float):
        raise NotImplementedError

    def row(self, x, t: float) -> Measure:
        _check_time(t)
        i = self.space.index_of(x)
        M = self.matrix(t)
        r = M.getrow(i).toarray().ravel() if sparse.issparse(M) else np.array(M[i])
        return Measure(self.space, _clean_row(r))

    def evolve(self, mu: Measure, t: float) -> Measure:
        _check_time(t)
        if mu.space is not self.space:
            raise ValueError("measure lives on another space")
        M = self.matrix(t)
        w = M.T @ mu.weights if sparse.issparse(M) else mu.weights @ M
        return Measure(self.space, _clean_row(np.asarray(w).ravel()))

    def dual_values(self, f: TestFunction, t: float, idx=None) -> np.ndarray:
        """``P(t) f`` at every point (or at the indices ``idx``)."""
        _check_time(t)
        fv = f.values(self.space)
        M = self.matrix(t)
        if idx is not None:
            idx = np.asarray(idx, dtype=int)
            M = M[idx]
        return np.asarray(M @ fv).ravel()

    def dual_on_grid(self, f: TestFunction, times: Sequence[float], idx) -> np.ndarray:
        """Array ``[len(times), len(idx)]`` of ``P(t) f(x)``."""
        return np.array([self.dual_values(f, t, idx) for t in times])

    def invariant(self) -> Measure | None:
        """Registered or computed unique invariant probability, if any."""
        return None

    def critical_times(self, z, xs=None) -> np.ndarray:
        """Times at which the model's known witnesses live (may be empty)."""
        return np.array([])


def _check_time(t: float):
    if t < 0:
        raise ValueError("time must be nonnegative")


def _clean_row(r: np.ndarray) -> np.ndarray:
    neg = r < 0
    if np.any(r < -NEG_CLAMP):
        raise ArithmeticError(f"transition weight {r.min()} below tolerance")
    if np.any(neg):
        r = np.where(neg, 0.0, r)
    return r


class GeneratorModel(SemigroupModel):
    """``P(t) = exp(Q t)`` for a conservative generator."""

    kind = "generator"

    def __init__(self, Q: GeneratorMatrix, name: str = "generator", cache_size: int = 256,
                 critical: Callable | None = None):
        self.Q = Q
        self._critical = critical
        self.space = Q.space
        self.name = name
        self._cache: OrderedDict[float, np.ndarray] = OrderedDict()
        self._cache_size = cache_size
        self._lock = threading.Lock()
        self._inv = None

    def matrix(self, t: float) -> np.ndarray:
        _check_time(t)
        key = float(t)
        with self._lock:
            hit = self._cache.get(key)
        if hit is None:
            hit = matrix_exponential(self.Q, key)
            hit.setflags(write=False)
            with self._lock:
                self._cache[key] = hit
                if len(self._cache) > self._cache_size:
                    self._cache.popitem(last=False)
        return hit

    def invariant(self) -> Measure | None:
        if self._inv is None:
            self._inv = invariant_measure(self.Q)
        return self._inv.measure if self._inv.unique else None

    def critical_times(self, z, xs=None) -> np.ndarray:
        return np.array([]) if self._critical is None else self._critical(self.space, z, xs)

    def dual_on_grid(self, f: TestFunction, times: Sequence[float], idx) -> np.ndarray:
        """Propagates ``P(t) f`` through the sorted times instead of exponentiating at each."""
        times = np.asarray(times, dtype=float)
        if np.any(times < 0):
            raise ValueError("time must be nonnegative")
        idx = np.asarray(idx, dtype=int)
        out = np.empty((len(times), len(idx)))
        g = f.values(self.space).astype(float)
        now = 0.0
        for j in np.argsort(times, kind="stable"):
            if times[j] > now:
                g = propagate_vector(self.Q, g, times[j] - now)
                now = times[j]
            out[j] = g[idx]
        return out


class ClosedFormModel(SemigroupModel):
    """Kernel given by an explicit formula per row.

    ``builder(space, t)`` returns COO triplets ``(rows, cols, vals)``;
    remainders are filled in by the builder from row normalisation.
    """

    kind = "closed_form"

    def __init__(self, family: str, space: MetricSpace,
                 builder: Callable[[MetricSpace, float], tuple], invariant: Measure | None = None,
                 critical: Callable | None = None):
        self.name = family
        self.family = family
        self.space = space
        self._builder = builder
        self._invariant = invariant
        self._critical = critical
        self._last = (None, None)

    def matrix(self, t: float):
        _check_time(t)
        last_t, last_M = self._last
        if last_t == t:
            return last_M
        rows, cols, vals = self._builder(self.space, float(t))
        n = self.space.size
        M = sparse.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
        self._last = (t, M)
        return M

    def invariant(self) -> Measure | None:
        return self._invariant

    def critical_times(self, z, xs=None) -> np.ndarray:
        return np.array([]) if self._critical is None else self._critical(self.space, z, xs)


class FlowModel(SemigroupModel):
    """Deterministic flow ``delta_x P(t) = delta_{phi(x, t)}`` on a half line."""

    kind = "flow"

    def __init__(self, name: str, space: MetricSpace, phi: Callable, critical: Callable | None = None,
                 time_to: Callable | None = None):
        self.name = name
        self.space = space
        self.phi = phi
        self._critical = critical
        self._time_to = time_to

    def image(self, x, t) -> np.ndarray:
        _check_time(np.min(t))
        y = np.asarray(self.phi(np.asarray(x, dtype=float), t), dtype=float)
        if np.any(y > self.space.upper_bound * (1 + 1e-12)) or np.any(np.asarray(x) < self.space.lower_bound):
            raise ValueError(f"flow leaves the truncated domain "
                             f"[{self.space.lower_bound}, {self.space.upper_bound}]")
        return y

    def max_time(self, x: float) -> float:
        """Largest t with ``phi(x, t)`` inside the truncated domain."""
        return float(self._time_to(float(x), self.space.upper_bound))

    def matrix(self, t):
        raise TypeError("flows have no transition matrix")

    def row(self, x, t: float) -> Measure:
        _check_time(t)
        return Measure(self.space, np.ones(1), self.image([float(x)], t))

    def evolve(self, mu: Measure, t: float) -> Measure:
        _check_time(t)
        pos = self.image(mu.positions, t)
        uniq, inv = np.unique(pos, return_inverse=True)
        return Measure(self.space, np.bincount(inv, weights=mu.weights), uniq)

    def dual_at(self, f: TestFunction, xs, t) -> np.ndarray:
        return np.asarray(f(self.image(xs, t)), dtype=float)

    def dual_on_grid(self, f: TestFunction, times, xs) -> np.ndarray:
        T = np.asarray(times, dtype=float)[:, None]
        X = np.asarray(xs, dtype=float)[None, :]
        return np.asarray(f(self.image(X, T)), dtype=float)

    def dual_masked(self, f: TestFunction, times, xs) -> np.ndarray:
        """Like :meth:`dual_on_grid`, with NaN where the orbit has left the domain."""
        T = np.asarray(times, dtype=float)[:, None]
        X = np.asarray(xs, dtype=float)[None, :]
        y = np.asarray(self.phi(X, T), dtype=float) * np.ones_like(T)
        inside = y <= self.space.upper_bound * (1 + 1e-12)
        vals = np.asarray(f(np.where(inside, y, self.space.lower_bound)), dtype=float)
        return np.where(inside, vals, np.nan)

    def critical_times(self, z, xs=None) -> np.ndarray:
        return np.array([]) if self._critical is None else self._critical(self.space, z, xs)


# -- operations --------------------------------------------------------------

def transition_row(model: SemigroupModel, x, t: float) -> Measure:
    """The probability ``P(t)(x, .)``."""
    return model.row(x, t)


def evolve_measure(model: SemigroupModel, mu: Measure, t: float) -> Measure:
    """``mu P(t)``."""
    return model.evolve(mu, t)


def dual_apply(model: SemigroupModel, f: TestFunction, t: float, points=None) -> TestFunction:
    """``P(t) f`` tabulated at ``points`` (all points by default)."""
    if isinstance(model, FlowModel):
        xs = np.asarray(points, dtype=float)
        vals = model.dual_at(f, xs, t)
        return tabulated({repr(float(x)): v for x, v in zip(xs, vals)}, f"P({t}){f.name}")
    space = model.space
    idx = np.arange(space.size) if points is None else space.indices(points)
    vals = model.dual_values(f, t, idx)
    return tabulated({space.labels[i]: v for i, v in zip(idx, vals)}, f"P({t}){f.name}")


def _to_dense(M) -> np.ndarray:
    return M.toarray() if sparse.issparse(M) else np.asarray(M)


def chapman_kolmogorov_residual(model: SemigroupModel, s: float, t: float, probes=None) -> float:
    """``max_x bl(P(s+t)(x, .), P(s)(x, .) P(t))`` over the probe points."""
    if s < 0 or t < 0:
        raise ValueError("times must be nonnegative")
    if isinstance(model, FlowModel):
        raise TypeError("flows compose exactly; no matrix to check")
    idx = np.arange(model.space.size) if probes is None else model.space.indices(probes)
    Pst = model.matrix(s + t)
    lhs = _to_dense(Pst[idx])
    Ps = model.matrix(s)
    rhs = _to_dense(Ps[idx] @ model.matrix(t))
    worst = 0.0
    for a, b in zip(lhs, rhs):
        worst = max(worst, bl_distance(Measure(model.space, _clean_row(a)),
                                       Measure(model.space, _clean_row(b))))
    return worst


@dataclass(frozen=True)
class InvariantResult:
    measure: Measure | None
    unique: bool
    nullity: int


def invariant_measure(Q: GeneratorMatrix, rank_tol: float = 1e-9) -> InvariantResult:
    """Left null vector of ``Q`` normalised to a probability.

    ``unique`` is true iff the null space is one-dimensional at the given
    relative rank tolerance; otherwise ``measure`` is None.
    """
    q = Q.entries
    _, s, vt = linalg.svd(q.T)
    tol = rank_tol * max(1.0, float(s[0]))
    nullity = int(np.sum(s <= tol))
    if nullity != 1:
        return InvariantResult(None, False, nullity)
    v = vt[-1]
    v = v / v.sum()
    if np.any(v < -1e-9):
        raise ArithmeticError("null vector is not sign-definite")
    v = np.clip(v, 0.0, None)
    return InvariantResult(Measure(Q.space, v / v.sum()), True, 1)


@dataclass(frozen=True)
class TrajectorySample:
    seed: int
    times: np.ndarray
    states: list[str]

    def to_rows(self) -> list[tuple[float, str]]:
        return list(zip(self.times.tolist(), self.states))


def _jump_tables(model: GeneratorModel):
    q = model.Q.entries
    rates = -np.diag(q).copy()
    probs = np.where(np.eye(len(q), dtype=bool), 0.0, q)
    with np.errstate(invalid="ignore", divide="ignore"):
        probs = np.where(rates[:, None] > 0, probs / rates[:, None], 0.0)
    return rates, np.cumsum(probs, axis=1)


def sample_trajectory(model: SemigroupModel, mu0: Measure, horizon: float, seed: int) -> TrajectorySample:
    """One path of the jump process up to ``horizon``.

    Start from ``mu0``, hold an Exp(|Q_xx|) time, jump by the normalised
    off-diagonal row.
    """
    if not isinstance(model, GeneratorModel):
        raise TypeError("trajectory sampling needs a generator model")
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    if not mu0.is_probability(1e-10):
        raise ValueError("initial measure must be a probability")
    rng = np.random.default_rng(seed)
    rates, cum = _jump_tables(model)
    x = int(rng.choice(model.space.size, p=mu0.weights / mu0.weights.sum()))
    times, states = [0.0], [x]
    t = 0.0
    while rates[x] > 0:
        t += rng.exponential(1.0 / rates[x])
        if t > horizon:
            break
        x = int(min(np.searchsorted(cum[x], rng.random() * cum[x, -1], side="right"), len(cum) - 1))
        times.append(t)
        states.append(x)
    labels = model.space.labels
    return TrajectorySample(seed, np.array(times), [labels[s] for s in states])


def sample_states_at(model: GeneratorModel, mu0: Measure, t: float, n_paths: int, seed: int) -> Measure:
    """Empirical law of the state at time ``t`` over ``n_paths`` independent paths."""
    if not isinstance(model, GeneratorModel):
        raise TypeError("sampling needs a generator model")
    rng = np.random.default_rng(seed)
    rates, cum = _jump_tables(model)
    n = model.space.size
    x = rng.choice(n, size=n_paths, p=mu0.weights / mu0.weights.sum())
    clock = np.zeros(n_paths)
    active = rates[x] > 0
    while np.any(active):
        ia = np.flatnonzero(active)
        clock[ia] += rng.exponential(1.0, size=len(ia)) / rates[x[ia]]
        jump = clock[ia] <= t
        ij = ia[jump]
        u = rng.random(len(ij)) * cum[x[ij], -1]
        x[ij] = np.minimum((cum[x[ij]] <= u[:, None]).sum(axis=1), n - 1)
        active[ia[~jump]] = False
        active[ij] = rates[x[ij]] > 0
    return Measure(model.space, np.bincount(x, minlength=n) / n_paths)
