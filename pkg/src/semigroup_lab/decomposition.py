"""The alpha-splitting of a transition law into ball-supported pieces.

Starting from ``delta_x0``, each stage waits until the current measure puts
more than ``alpha`` of its mass in ``B(z, r)``, then peels off ``alpha``
times its normalised restriction to a slightly smaller ball:

    current P(t_l) = alpha nu_l + (1 - alpha) mu_l.

After ``k`` stages ``delta_x0 P(t)`` is a geometric mixture of the ``nu_l``
pushed forward, plus a remainder of weight ``(1 - alpha)^k``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .analysis import default_time_grid, half_oscillation, null_boundary_radius
from .measure import Measure, bl_distance, convex_combine, format_measure, restrict_normalize
from .semigroup import FlowModel, SemigroupModel
from .testfn import TestFunction

MASS_MARGIN = 1e-9
NEG_CLAMP = 1e-12


class SplitFailure(RuntimeError):
    """Raised when a stage cannot find enough mass in the ball."""

    def __init__(self, stage: int, message: str):
        super().__init__(f"stage {stage}: {message}")
        self.stage = stage


@dataclass(frozen=True, eq=False)
class AlphaSplit:
    alpha: float
    k: int
    z: str
    r: float
    x0: str
    times: tuple[float, ...]
    radii: tuple[float, ...]
    nus: tuple[Measure, ...]
    mus: tuple[Measure, ...]
    stage_residuals: tuple[float, ...]

    @property
    def threshold(self) -> float:
        """``t_1 + ... + t_k``, the earliest time the mixture formula applies."""
        return float(sum(self.times))

    def coefficients(self) -> np.ndarray:
        """``alpha (1-alpha)^(l-1)`` for each stage, then ``(1-alpha)^k``."""
        a = self.alpha
        c = [a * (1 - a) ** l for l in range(self.k)]
        return np.array(c + [(1 - a) ** self.k])

    def to_rows(self) -> list[list]:
        """One row per stage: ``stage, t, r, nu, mu``."""
        return [[l + 1, t, r, format_measure(nu), format_measure(mu)]
                for l, (t, r, nu, mu) in enumerate(zip(self.times, self.radii, self.nus, self.mus))]


def choose_k(alpha: float, f_sup: float, epsilon: float) -> int:
    """Smallest ``k >= 1`` with ``4 (1 - alpha)^k f_sup < epsilon``."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    if f_sup < 0 or epsilon <= 0:
        raise ValueError("need f_sup >= 0 and epsilon > 0")
    k = 1
    while 4 * (1 - alpha) ** k * f_sup >= epsilon:
        k += 1
    return k


def _peel(m: Measure, nu: Measure, alpha: float, stage: int) -> Measure:
    w = (m.weights - alpha * nu.weights) / (1 - alpha)
    if np.any(w < -NEG_CLAMP):
        raise SplitFailure(stage, f"remainder weight {w.min():.3g} is negative")
    w = np.clip(w, 0.0, None)
    return Measure(m.space, w / w.sum())


def build_alpha_split(model: SemigroupModel, x0, z, r: float, alpha: float, f_sup: float, epsilon: float,
                      times=None, k: int | None = None, template: AlphaSplit | None = None) -> AlphaSplit:
    """Run the ``k`` stages from ``delta_x0``.

    Each ``t_l`` is the first grid time at which the ball ``B(z, r)`` holds
    mass above ``alpha + 1e-9``; ``r_l`` is a radius below ``r`` with the same
    ball content and no mass on its sphere. With ``template`` the stage times
    and radii are taken from an existing split instead of searched.
    """
    if isinstance(model, FlowModel):
        raise TypeError("splitting needs a finite-state model")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    space = model.space
    inv = model.invariant()
    if inv is None:
        raise ValueError("splitting needs a model with a unique invariant measure")
    gamma = inv.of(space.ball_members(z, r))
    if alpha >= gamma:
        raise SplitFailure(1, f"alpha={alpha} is not below mu*(B(z, r))={gamma:.6g}")
    if k is None:
        k = choose_k(alpha, f_sup, epsilon)
    grid = default_time_grid() if times is None else np.sort(np.asarray(times, dtype=float))
    d = space.distances_from(z)
    current = Measure.dirac(space, x0)
    ts, rs, nus, mus, res = [], [], [], [], []
    for stage in range(1, k + 1):
        if template is not None:
            t = template.times[stage - 1]
            m = model.evolve(current, t)
            if m.of(space.ball_members(z, template.radii[stage - 1])) <= alpha + MASS_MARGIN:
                raise SplitFailure(stage, "template time leaves too little mass in the ball")
            r_l = template.radii[stage - 1]
        else:
            t, m = _first_time(model, current, space.ball_members(z, r), alpha, grid, stage)
            inside = d[m.support_indices()]
            inside = inside[inside < r]
            r_l = null_boundary_radius(m, z, float(inside.max()), r)
        ball = space.ball_members(z, r_l)
        nu = restrict_normalize(m, ball)
        mu = _peel(m, nu, alpha, stage)
        mix = convex_combine([alpha, 1 - alpha], [nu, mu])
        ts.append(float(t))
        rs.append(float(r_l))
        nus.append(nu)
        mus.append(mu)
        res.append(bl_distance(mix, m))
        current = mu
    zl = space.labels[space.index_of(z)]
    xl = space.labels[space.index_of(x0)]
    return AlphaSplit(alpha, k, zl, float(r), xl, tuple(ts), tuple(rs), tuple(nus), tuple(mus), tuple(res))


def _first_time(model, current, members, alpha, grid, stage):
    for t in grid:
        m = model.evolve(current, float(t))
        if m.of(members) > alpha + MASS_MARGIN:
            return float(t), m
    raise SplitFailure(stage, f"no grid time up to {grid[-1]:g} puts mass above alpha in the ball")


def reconstruct(model: SemigroupModel, split: AlphaSplit, t: float) -> tuple[Measure, float]:
    """Assemble the mixture formula at time ``t`` and compare with ``delta_x0 P(t)``."""
    if t < split.threshold - 1e-12:
        raise ValueError(f"t={t} is below the split threshold {split.threshold}")
    coef = split.coefficients()
    elapsed = np.cumsum(split.times)
    parts = [model.evolve(nu, max(0.0, t - s)) for nu, s in zip(split.nus, elapsed)]
    parts.append(model.evolve(split.mus[-1], max(0.0, t - elapsed[-1])))
    assembled = convex_combine(list(coef), parts)
    direct = model.evolve(Measure.dirac(model.space, split.x0), t)
    return assembled, bl_distance(assembled, direct)


@dataclass(frozen=True)
class SplitBound:
    x: str
    tau: float
    bound: float
    empirical: float

    @property
    def holds(self) -> bool:
        return self.empirical <= self.bound


def estimate_eventual_modulus_via_split(model: SemigroupModel, f: TestFunction, z, r: float, alpha: float,
                                        epsilon: float, x_list: Sequence, T0: float, x0=None,
                                        times=None) -> list[SplitBound]:
    """Compare ``eps/2 sum alpha(1-alpha)^(l-1) + 2 (1-alpha)^k ||f||`` with the observed gap.

    ``B(z, r)`` is the ball from the Lemma-1 search and ``T0`` its time;
    ``x0`` (default ``z``) is the anchor whose neighbours are ``x_list``.
    Each point gets its own split; ``tau`` is the larger of its threshold and
    the anchor's, plus ``T0``. The observed gap is the grid sup over
    ``t >= tau`` of ``|P(t)f(x) - P(t)f(x0)|``, or a total-variation bound for later times if larger.
    """
    space = model.space
    x0 = z if x0 is None else x0
    f_sup = float(np.max(np.abs(f.values(space))))
    grid = default_time_grid() if times is None else np.sort(np.asarray(times, dtype=float))
    anchor = build_alpha_split(model, x0, z, r, alpha, f_sup, epsilon, grid)
    k = anchor.k
    bound = epsilon / 2 * float(anchor.coefficients()[:-1].sum()) + 2 * (1 - alpha) ** k * f_sup
    inv = model.invariant()
    out = []
    i0 = space.index_of(x0)
    for x in x_list:
        sx = build_alpha_split(model, x, z, r, alpha, f_sup, epsilon, grid, k=k)
        tau = max(sx.threshold, anchor.threshold) + T0
        t_end = max(float(grid[-1]), tau)
        ts = np.unique(np.append(grid[grid >= tau], [tau, t_end]))
        ix = space.index_of(x)
        vals = model.dual_on_grid(f, ts, [i0, ix])
        grid_gap = float(np.max(np.abs(vals[:, 1] - vals[:, 0])))
        M = model.matrix(t_end)
        rows = M[[i0, ix]].toarray() if hasattr(M, "toarray") else np.asarray(M)[[i0, ix]]
        tail = half_oscillation(f, space) * float(np.abs(rows - inv.weights[None, :]).sum())
        out.append(SplitBound(space.labels[ix], float(tau), float(bound), max(grid_gap, tail)))
    return out
