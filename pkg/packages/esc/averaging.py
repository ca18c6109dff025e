"""Period averaging of phase-dependent vector fields.

A phase field ``field(tau, x)`` is averaged over one common period with a
composite Simpson rule on nested nodes: each refinement keeps the previous
evaluations and only adds the midpoints.
"""

import logging
import math
from dataclasses import dataclass
from functools import reduce
from typing import Any, Callable, Dict, Optional, Sequence

import numpy as np

from packages.core.errors import ConfigError, DitherError, QuadratureError
from packages.esc.costs import CostFunction
from packages.esc.dither import DitherSpec
from packages.esc.estimators import demodulate_gradient, demodulate_hessian

logger = logging.getLogger(__name__)

PhaseField = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class QuadratureConfig:
    points_per_period: int = 64
    tol: float = 1e-10
    max_doublings: int = 12

    def __post_init__(self):
        if self.points_per_period < 64 or self.points_per_period % 2:
            raise ConfigError("points_per_period must be an even number >= 64")
        if not self.tol > 0.0:
            raise ConfigError("Quadrature tolerance must be positive")
        if self.max_doublings < 1:
            raise ConfigError("max_doublings must be at least 1")

    @classmethod
    def from_settings(cls, settings: Optional[Dict[str, Any]]) -> "QuadratureConfig":
        settings = settings or {}
        return cls(
            points_per_period=int(settings.get("points_per_period", cls.points_per_period)),
            tol=float(settings.get("tol", cls.tol)),
            max_doublings=int(settings.get("max_doublings", cls.max_doublings)),
        )


def common_period(rates: Sequence[int]) -> float:
    """Smallest phase period shared by sin(w_i tau) for all rates."""
    return 2.0 * math.pi / reduce(math.gcd, (abs(int(r)) for r in rates))


def _evaluate(field: PhaseField, x: np.ndarray, tau: np.ndarray) -> np.ndarray:
    tau = tau.reshape(tau.shape + (1,) * (x.ndim - 1))
    values = np.asarray(field(tau, x), dtype=float)
    if values.ndim == x.ndim:
        # Phase-independent field.
        values = np.broadcast_to(values, tau.shape[:1] + values.shape)
    return values


def _simpson(values: np.ndarray) -> np.ndarray:
    # Periodic composite Simpson: (mean of even nodes + 2 * mean of odd nodes) / 3.
    if np.all(values == values[0]):
        return np.array(values[0])
    even = np.mean(values[0::2], axis=0)
    odd = np.mean(values[1::2], axis=0)
    return even + 2.0 * (odd - even) / 3.0


def simpson_average(field: PhaseField, x: Any, period: float, intervals: int) -> np.ndarray:
    """Single Simpson estimate of the period average with ``intervals`` panels."""
    if intervals < 2 or intervals % 2:
        raise ConfigError("Simpson averaging needs an even number of intervals")
    x = np.asarray(x, dtype=float)
    tau = np.arange(intervals) * (period / intervals)
    return _simpson(_evaluate(field, x, tau))


def average_rhs(field: PhaseField, x: Any, period: float,
                cfg: Optional[QuadratureConfig] = None) -> np.ndarray:
    """
    Average a phase field over one period at a frozen state.

    Args:
        field: Callable ``field(tau, x)``; ``tau`` broadcasts against ``x.shape[:-1]``
        x: State, shape ``(..., m)``
        period: Common period of the field in ``tau``
        cfg: Quadrature settings

    Returns:
        Averaged field with the shape of ``x``

    Raises:
        QuadratureError: if successive refinements keep disagreeing
    """
    cfg = cfg or QuadratureConfig()
    x = np.asarray(x, dtype=float)
    intervals = cfg.points_per_period
    values = _evaluate(field, x, np.arange(intervals) * (period / intervals))
    estimate = _simpson(values)

    for _ in range(cfg.max_doublings):
        midpoints = (np.arange(intervals) + 0.5) * (period / intervals)
        fresh = _evaluate(field, x, midpoints)
        merged = np.empty((2 * intervals,) + values.shape[1:])
        merged[0::2] = values
        merged[1::2] = fresh
        values, intervals = merged, 2 * intervals
        refined = _simpson(values)
        if not np.all(np.isfinite(refined)):
            raise QuadratureError("Non-finite value while averaging over the period")
        change = float(np.max(np.abs(refined - estimate), initial=0.0))
        scale = max(1.0, float(np.max(np.abs(refined), initial=0.0)))
        estimate = refined
        if change <= cfg.tol * scale:
            return estimate

    raise QuadratureError(
        f"Period average did not converge after {cfg.max_doublings} refinements",
        {"intervals": intervals, "change": change, "tol": cfg.tol},
    )


def average_gradient(cost: CostFunction, spec: DitherSpec, theta: Any,
                     cfg: Optional[QuadratureConfig] = None) -> np.ndarray:
    """Period average of the gradient estimate at frozen theta."""
    return average_rhs(
        lambda tau, th: demodulate_gradient(cost, spec, th, tau),
        theta, common_period(spec.rates), cfg,
    )


def average_hessian(cost: CostFunction, spec: DitherSpec, theta: Any,
                    cfg: Optional[QuadratureConfig] = None) -> np.ndarray:
    """Period average of the Hessian estimate at frozen theta."""
    theta = np.asarray(theta, dtype=float)
    n = spec.n
    flat = average_rhs(
        lambda tau, th: demodulate_hessian(cost, spec, th, tau).reshape(
            np.broadcast_shapes(np.shape(tau), th.shape[:-1]) + (n * n,)),
        theta, common_period(spec.rates), cfg,
    )
    return flat.reshape(flat.shape[:-1] + (n, n))


def residual(average_value: Any, model_based_value: Any) -> np.ndarray:
    """Averaged minus model-based value."""
    return np.asarray(average_value, dtype=float) - np.asarray(model_based_value, dtype=float)


def residual_gradient(cost: CostFunction, spec: DitherSpec, theta: Any,
                      cfg: Optional[QuadratureConfig] = None) -> np.ndarray:
    return residual(average_gradient(cost, spec, theta, cfg), cost.grad(theta))


def residual_hessian(cost: CostFunction, spec: DitherSpec, theta: Any,
                     cfg: Optional[QuadratureConfig] = None) -> np.ndarray:
    return residual(average_hessian(cost, spec, theta, cfg), cost.hess(theta))


def closed_form_A(r1: float, r2: float) -> np.ndarray:
    """
    Matrix A with averaged gradient = grad J + a^2 A theta for quartic2d.

    Valid for rates (1, 3) and relative amplitudes (r1, r2) of unit norm.
    """
    if r1 == 0.0 or r2 == 0.0:
        raise DitherError("Relative amplitudes must both be nonzero")
    cube_ratio = r1 ** 3 / r2
    return np.array([
        [6 * r1 ** 2 - 3 * r1 * r2 + 6 * r2 ** 2, 3 * r1 ** 2 - 3 * r1 * r2 + 6 * r2 ** 2],
        [-2 * cube_ratio + 6 * r1 ** 2 + 3 * r2 ** 2, -cube_ratio + 6 * r1 ** 2 + 3 * r2 ** 2],
    ])
