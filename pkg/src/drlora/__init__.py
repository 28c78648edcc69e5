"""Distributional reinforcement learning with online risk adaptation."""

from .risk import EmpiricalDistribution, RiskMeasureSpec, cvar_right, distorted_value, ltv, make_empirical, rtv

__version__ = "0.1.0"

__all__ = [
    "EmpiricalDistribution",
    "RiskMeasureSpec",
    "cvar_right",
    "distorted_value",
    "ltv",
    "make_empirical",
    "rtv",
]
