"""Empirical distributions and distortion risk measures on finite atom sets.

All risk values are computed exactly on the atoms, without sampling. Atoms are
treated as *losses*: the right tail is the bad tail, and a smaller ``alpha``
means a more risk-averse evaluation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "EmpiricalDistribution",
    "Family",
    "RiskMeasureSpec",
    "make_empirical",
    "cvar_right",
    "cvar_curve",
    "var_right",
    "risk_value",
    "risk_curve",
    "distorted_value",
    "cvar_distortion",
    "quantile_distortion",
    "rtv",
    "ltv",
]


class EmpiricalDistribution:
    """Equally weighted atoms, stored sorted ascending and read-only."""

    __slots__ = ("_atoms", "_mean", "_tail")

    def __init__(self, atoms: np.ndarray):
        arr = np.array(atoms, dtype=float)
        arr.sort()
        arr.flags.writeable = False
        self._atoms = arr
        self._mean: Optional[float] = None
        self._tail: Optional[tuple[np.ndarray, np.ndarray]] = None

    @property
    def atoms(self) -> np.ndarray:
        return self._atoms

    @property
    def count(self) -> int:
        return self._atoms.shape[0]

    def mean(self) -> float:
        # Shifted by the minimum so that constant atoms give the constant exactly.
        if self._mean is None:
            lo = self._atoms[0]
            self._mean = float(lo + math.fsum(self._atoms - lo) / self.count)
        return self._mean

    def shift(self, c: float) -> "EmpiricalDistribution":
        return EmpiricalDistribution(self._atoms + c)

    def scale(self, lam: float) -> "EmpiricalDistribution":
        return EmpiricalDistribution(self._atoms * lam)

    def __len__(self) -> int:
        return self.count

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EmpiricalDistribution):
            return NotImplemented
        return np.array_equal(self._atoms, other._atoms)

    def __hash__(self) -> int:
        return hash(self._atoms.tobytes())

    def __repr__(self) -> str:
        return f"EmpiricalDistribution({self._atoms.tolist()})"


def make_empirical(values: Sequence[float]) -> EmpiricalDistribution:
    arr = np.asarray(values, dtype=float).ravel()
    if arr.size == 0:
        raise ValueError("empirical distribution needs at least one atom")
    if not np.all(np.isfinite(arr)):
        raise ValueError("atoms must be finite")
    return EmpiricalDistribution(arr)


class Family(str, Enum):
    CVAR = "cvar"
    QUANTILE = "quantile"
    TABULATED = "tabulated"


Distortion = Callable[[np.ndarray, float], np.ndarray]


@dataclass(frozen=True)
class RiskMeasureSpec:
    """A parametric distortion risk measure ``rho_alpha`` with ``alpha`` in ``[alpha_min, alpha_max]``.

    For the tabulated family, ``distortion(u, alpha)`` must map ``[0, 1]`` onto
    ``[0, 1]`` with ``g(0) = 0``, ``g(1) = 1`` and be nondecreasing in ``u``.
    """

    family: Family = Family.CVAR
    alpha_min: float = 0.1
    alpha_max: float = 1.0
    distortion: Optional[Distortion] = None

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        if not (0.0 < self.alpha_min <= self.alpha_max <= 1.0):
            raise ValueError(
                f"need 0 < alpha_min <= alpha_max <= 1, got [{self.alpha_min}, {self.alpha_max}]"
            )
        if self.family is Family.TABULATED:
            if self.distortion is None:
                raise ValueError("tabulated family requires a distortion function")
            u = np.linspace(0.0, 1.0, 257)
            for a in (self.alpha_min, 0.5 * (self.alpha_min + self.alpha_max), self.alpha_max):
                g = np.asarray(self.distortion(u, a), dtype=float)
                if abs(g[0]) > 1e-12 or abs(g[-1] - 1.0) > 1e-12 or np.any(np.diff(g) < -1e-12):
                    raise ValueError(f"distortion at alpha={a} is not a valid distortion function")

    def check_alpha(self, alpha: float) -> None:
        if not (self.alpha_min - 1e-12 <= alpha <= self.alpha_max + 1e-12):
            raise ValueError(f"alpha={alpha} outside [{self.alpha_min}, {self.alpha_max}]")

    def g(self, u: np.ndarray, alpha: float) -> np.ndarray:
        if self.family is Family.CVAR:
            return cvar_distortion(u, alpha)
        if self.family is Family.QUANTILE:
            return quantile_distortion(u, alpha)
        return np.asarray(self.distortion(u, alpha), dtype=float)


def _check_level(alpha) -> np.ndarray:
    a = np.asarray(alpha, dtype=float)
    if a.size and not (a.min() > 0.0 and a.max() <= 1.0):
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    return a


def _tail_excess(desc: np.ndarray) -> np.ndarray:
    """``D[j] = sum_{i<j} (desc[i] - desc[j])`` built from nonnegative gap terms."""
    gaps = desc[:-1] - desc[1:]
    out = np.zeros_like(desc)
    out[1:] = np.cumsum(gaps * np.arange(1, desc.shape[0]))
    return out


def cvar_curve(dist: EmpiricalDistribution, alphas) -> np.ndarray:
    """Right-tail CVaR at each level in ``alphas``.

    Uses ``CVaR_a = min_j (x_j + E[(X - x_j)_+] / a)`` over the atoms ``x_j``.
    Every candidate is nonincreasing in ``a``, so the result is monotone in
    floating point as well, and the boundary atom enters with its fractional
    weight automatically. The mean is a floor (exact at ``a = 1``), which keeps
    rounding in the candidates from dipping below it.
    """
    a = _check_level(alphas)
    if dist._tail is None:
        desc = dist.atoms[::-1]
        dist._tail = (desc, _tail_excess(desc) / dist.count)
    desc, excess = dist._tail
    vals = (desc[None, :] + excess[None, :] / a.reshape(-1, 1)).min(axis=1)
    mean = dist.mean()
    vals = np.where(a.reshape(-1) == 1.0, mean, np.maximum(vals, mean))
    return vals.reshape(a.shape)


def cvar_right(dist: EmpiricalDistribution, alpha: float) -> float:
    """Mean of the largest ``alpha`` fraction of the mass, splitting the boundary atom."""
    return float(cvar_curve(dist, alpha))


def _count_levels_at_most(alpha: np.ndarray, k: int) -> np.ndarray:
    # number of i in 1..k with i/k <= alpha, evaluated with the same i/k floats as the distortion
    levels = np.arange(1, k + 1) / k
    return (levels[None, :] <= alpha.reshape(-1, 1)).sum(axis=1).reshape(alpha.shape)


def var_right(dist: EmpiricalDistribution, alpha: float) -> float:
    """Left-continuous inverse CDF at level ``1 - alpha``; level 0 maps to the smallest atom."""
    a = _check_level(alpha)
    return float(_var_curve(dist, a))


def _var_curve(dist: EmpiricalDistribution, a: np.ndarray) -> np.ndarray:
    k = dist.count
    idx = np.maximum(k - _count_levels_at_most(a, k), 1) - 1
    return dist.atoms[idx]


def cvar_distortion(u, alpha: float) -> np.ndarray:
    return np.minimum(np.asarray(u, dtype=float) / alpha, 1.0)


def quantile_distortion(u, alpha: float) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    return np.where((u > alpha) | (u >= 1.0), 1.0, 0.0)


def distorted_value(dist: EmpiricalDistribution, spec: RiskMeasureSpec, alpha: float) -> float:
    """Distortion integral on the atoms: ``sum_i [g(i/K) - g((i-1)/K)] x_(i)``, atoms descending."""
    spec.check_alpha(alpha)
    k = dist.count
    g = spec.g(np.arange(k + 1) / k, alpha)
    w = np.diff(g)
    return float(np.dot(w, dist.atoms[::-1]))


def risk_curve(spec: RiskMeasureSpec, dist: EmpiricalDistribution, alphas) -> np.ndarray:
    """``rho_a(dist)`` for every ``a`` in ``alphas``."""
    a = np.asarray(alphas, dtype=float)
    if spec.family is Family.CVAR:
        return cvar_curve(dist, a)
    if spec.family is Family.QUANTILE:
        return _var_curve(dist, _check_level(a))
    return np.array([distorted_value(dist, spec, float(x)) for x in a.ravel()]).reshape(a.shape)


def risk_value(spec: RiskMeasureSpec, dist: EmpiricalDistribution, alpha: float) -> float:
    return float(risk_curve(spec, dist, alpha))


def _even_atoms(dist: EmpiricalDistribution) -> np.ndarray:
    x = dist.atoms
    if x.shape[0] % 2:
        mid = x.shape[0] // 2
        x = np.insert(x, mid, x[mid])
    return x


def rtv(dist: EmpiricalDistribution) -> float:
    """Right-truncated variance: spread of the lower half about the median."""
    x = _even_atoms(dist)
    n = x.shape[0]
    half = x[: n // 2]
    return float(2.0 / n * np.sum((half - half[-1]) ** 2))


def ltv(dist: EmpiricalDistribution) -> float:
    """Left-truncated variance: spread of the upper half about the median, ``rtv`` of ``-X``."""
    x = _even_atoms(dist)
    n = x.shape[0]
    half = x[n // 2:]
    return float(2.0 / n * np.sum((half - half[0]) ** 2))
