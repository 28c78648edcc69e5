"""Online selection of the risk parameter.

Follow-the-perturbed-leader over a discretised parameter grid, the recursive
(satisficing) variant with its breakpoint search, the exponentially weighted
forecaster used by the ART/TOP baselines, and regret bookkeeping.

Every argmin over the grid breaks ties toward the largest ``alpha``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .risk import EmpiricalDistribution, Family, RiskMeasureSpec, cvar_right, risk_curve, risk_value

__all__ = [
    "RiskGrid",
    "LossTracker",
    "EwafBelief",
    "build_grid",
    "default_grid_epsilon",
    "loss_signal",
    "loss_curve",
    "recursive_loss",
    "accumulate",
    "ftpl_select",
    "grid_argmin",
    "recursive_select",
    "satisficing_search",
    "satisficing_lp_oracle",
    "satisficing_objective",
    "ewaf_update",
    "regret",
]

MAX_GRID_POINTS = 512


@dataclass(frozen=True)
class RiskGrid:
    points: np.ndarray
    epsilon: float

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def alpha_min(self) -> float:
        return float(self.points[0])

    @property
    def alpha_max(self) -> float:
        return float(self.points[-1])

    def hausdorff(self) -> float:
        """Hausdorff distance between the grid and the interval it discretises."""
        if len(self) == 1:
            return 0.0
        return float(np.max(np.diff(self.points)) / 2.0)

    def index_of(self, alpha: float) -> int:
        i = int(np.argmin(np.abs(self.points - alpha)))
        if abs(self.points[i] - alpha) > 1e-9:
            raise ValueError(f"{alpha} is not a grid point")
        return i


def build_grid(alpha_min: float, alpha_max: float, epsilon: float) -> RiskGrid:
    """Uniform grid over ``[alpha_min, alpha_max]`` with both endpoints and gaps at most ``epsilon``."""
    if not (0.0 < alpha_min <= alpha_max <= 1.0):
        raise ValueError(f"need 0 < alpha_min <= alpha_max <= 1, got [{alpha_min}, {alpha_max}]")
    if not epsilon > 0.0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    span = alpha_max - alpha_min
    if span == 0.0:
        return RiskGrid(np.array([alpha_min]), epsilon)
    intervals = max(1, math.ceil(span / epsilon - 1e-9))
    pts = np.round(np.linspace(alpha_min, alpha_max, intervals + 1), 12)
    pts[0], pts[-1] = alpha_min, alpha_max
    pts.flags.writeable = False
    return RiskGrid(pts, epsilon)


def default_grid_epsilon(total_periods: int, alpha_min: float = 0.1, alpha_max: float = 1.0) -> float:
    eps = max(0.01, 0.9 / math.sqrt(max(total_periods, 1)))
    span = alpha_max - alpha_min
    if span > 0:
        eps = max(eps, span / (MAX_GRID_POINTS - 1))
    return eps


def loss_signal(spec: RiskMeasureSpec, x_prev: EmpiricalDistribution,
                x_next: EmpiricalDistribution, alpha: float) -> float:
    """``|rho_a(X_t) - rho_a(X_{t+1})|``."""
    spec.check_alpha(alpha)
    return abs(risk_value(spec, x_prev, alpha) - risk_value(spec, x_next, alpha))


def loss_curve(spec: RiskMeasureSpec, points: np.ndarray, x_prev: EmpiricalDistribution,
               x_next: EmpiricalDistribution) -> np.ndarray:
    """:func:`loss_signal` evaluated at every grid point at once."""
    return np.abs(risk_curve(spec, x_prev, points) - risk_curve(spec, x_next, points))


def recursive_loss(spec: RiskMeasureSpec, x_prev: EmpiricalDistribution, x_next: EmpiricalDistribution,
                   alpha: float, alpha_prev: float) -> float:
    """``|rho_alpha(X_{t-1}) - rho_{alpha_prev}(X_t)|``; equals :func:`loss_signal` when the two alphas agree."""
    return abs(risk_value(spec, x_prev, alpha) - risk_value(spec, x_next, alpha_prev))


@dataclass
class LossTracker:
    """Running per-grid-point loss sums for one state-action pair."""

    grid: RiskGrid
    cumulative: np.ndarray = field(default=None)
    steps_seen: int = 0

    def __post_init__(self):
        if self.cumulative is None:
            self.cumulative = np.zeros(len(self.grid))


def accumulate(tracker: LossTracker, spec: RiskMeasureSpec, x_prev: EmpiricalDistribution,
               x_next: EmpiricalDistribution) -> LossTracker:
    losses = loss_curve(spec, tracker.grid.points, x_prev, x_next)
    return LossTracker(tracker.grid, tracker.cumulative + losses, tracker.steps_seen + 1)


def grid_argmin(values: np.ndarray) -> int:
    """Index of the minimum, preferring the last (largest alpha) among ties."""
    return int(np.flatnonzero(values == values.min())[-1])


def ftpl_select(tracker: LossTracker, grid: RiskGrid, eta: float, rng: np.random.Generator,
                perturbation: Optional[float] = None) -> float:
    """One FTPL step: ``argmin_a {sum_i l_i(a) - sigma * a}`` with ``sigma ~ Exp(rate=eta)``.

    ``perturbation`` overrides the random draw (no draw is made then).
    """
    if len(grid) == 1:
        return float(grid.points[0])
    if not eta > 0:
        raise ValueError(f"eta must be positive, got {eta}")
    sigma = rng.exponential(1.0 / eta) if perturbation is None else perturbation
    return float(grid.points[grid_argmin(tracker.cumulative - sigma * grid.points)])


def satisficing_objective(q_atoms, tau: float, b: float) -> float:
    """``(1/K) sum_k (b (q_k - tau) + 1)_+``.

    ``b = inf`` (a breakpoint from a subnormal gap) takes the limit: atoms below
    ``tau`` give 0, atoms at ``tau`` give 1.
    """
    excess = np.asarray(q_atoms, dtype=float) - tau
    if math.isinf(b):
        return float(np.mean(np.where(excess < 0.0, 0.0, np.where(excess == 0.0, 1.0, np.inf))))
    with np.errstate(over="ignore"):  # huge b times a positive excess is +inf, which is right
        return float(np.mean(np.maximum(b * excess + 1.0, 0.0)))


def satisficing_search(q_atoms, tau: float, alpha_min: float, alpha_max: float = 1.0) -> float:
    """``min_{b >= 0} (1/K) sum_k (b (q_k - tau) + 1)_+`` by a sorted breakpoint scan, clamped.

    The objective is convex and piecewise linear in ``b``. Each atom below
    ``tau`` stops contributing at ``b = 1 / (tau - q_k)``, so past a breakpoint
    the slope is ``(sum of positive excesses - sum of the gaps still active) / K``.
    The minimum sits at the first breakpoint where that slope is nonnegative.
    Gap sums are accumulated smallest first and compared with the positive part
    directly, so a tiny gap is not absorbed by a large one.
    """
    q = np.asarray(q_atoms, dtype=float).ravel()
    if q.shape[0] == 0:
        raise ValueError("need at least one atom")
    excess = q - tau
    gaps = np.sort(-excess[excess < 0.0])                      # tau - q_k, ascending
    positive = math.fsum(excess[excess > 0.0])
    active = np.concatenate(([0.0], np.cumsum(gaps)))          # sums of the i smallest gaps
    i = int(np.searchsorted(active, positive, side="right")) - 1
    if i == gaps.shape[0]:
        value = 1.0                                            # slope nonnegative from b = 0
    else:
        with np.errstate(over="ignore", divide="ignore"):
            value = satisficing_objective(q, tau, 1.0 / gaps[i])
    return float(min(max(value, alpha_min), alpha_max))


def satisficing_lp_oracle(q_atoms, tau: float) -> tuple[float, float]:
    """Exact minimiser ``(b, value)`` of the satisficing objective over ``b >= 0``.

    Brute-force enumeration of ``b = 0`` and every breakpoint. If every atom is
    below ``tau`` the objective descends to zero; the smallest ``b`` where it
    reaches zero is reported.
    """
    q = np.asarray(q_atoms, dtype=float).ravel()
    with np.errstate(over="ignore", divide="ignore"):
        candidates = [0.0] + [1.0 / (tau - x) for x in q if x < tau]
    best_b, best_v = 0.0, satisficing_objective(q, tau, 0.0)
    for b in sorted(candidates):
        v = satisficing_objective(q, tau, b)
        if v < best_v:
            best_b, best_v = b, v
    return best_b, best_v


def recursive_select(spec: RiskMeasureSpec, x_prev: EmpiricalDistribution, x_next: EmpiricalDistribution,
                     alpha_prev: float, grid: RiskGrid) -> float:
    """``argmin_a |rho_a(X_{t-1}) - rho_{alpha_prev}(X_t)|``.

    CVaR uses the closed-form satisficing search on the previous atoms with the
    target ``tau = CVaR_{alpha_prev}(X_t)``; other families scan the grid.
    """
    if spec.family is Family.CVAR:
        tau = cvar_right(x_next, alpha_prev)
        return satisficing_search(x_prev.atoms, tau, spec.alpha_min, spec.alpha_max)
    target = risk_value(spec, x_next, alpha_prev)
    losses = np.abs(risk_curve(spec, x_prev, grid.points) - target)
    return float(grid.points[grid_argmin(losses)])


@dataclass(frozen=True)
class EwafBelief:
    """Softmax belief ``p(d) ~ exp(w(d))`` over a finite set of arms."""

    arms: tuple
    weights: np.ndarray

    @classmethod
    def uniform(cls, arms: Sequence) -> "EwafBelief":
        return cls(tuple(arms), np.zeros(len(arms)))

    def probabilities(self) -> np.ndarray:
        z = np.exp(self.weights - np.max(self.weights))
        return z / z.sum()

    def sample(self, rng: np.random.Generator) -> int:
        p = self.probabilities()
        return int(min(np.searchsorted(np.cumsum(p), rng.random(), side="right"), len(p) - 1))


def ewaf_update(belief: EwafBelief, chosen: int, g: float, eta: float) -> EwafBelief:
    """Importance-weighted update of the chosen arm only: ``w(d) += eta * g / p(d)``."""
    p = belief.probabilities()
    if not p[chosen] > 0.0:
        raise ValueError(f"arm {chosen} has zero probability")
    w = belief.weights.copy()
    w[chosen] = w[chosen] + eta * (g / p[chosen])
    return EwafBelief(belief.arms, w)


def regret(loss_table, chosen: Sequence[float], grid: RiskGrid) -> float:
    """``sum_t l_t(alpha_t) - min_a sum_t l_t(a)`` with ``loss_table[t, j] = l_t(grid[j])``."""
    table = np.asarray(loss_table, dtype=float)
    if table.ndim != 2 or table.shape[1] != len(grid):
        raise ValueError(f"loss table must have shape (T, {len(grid)}), got {table.shape}")
    if table.shape[0] != len(chosen):
        raise ValueError(f"{table.shape[0]} loss rows but {len(chosen)} chosen parameters")
    idx = np.array([grid.index_of(a) for a in chosen], dtype=int)
    incurred = table[np.arange(table.shape[0]), idx].sum()
    return float(incurred - table.sum(axis=0).min())
