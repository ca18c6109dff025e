"""Perturbation-based gradient and Hessian estimates.

Both estimates demodulate a single cost measurement taken at the dithered
point theta_hat + a * r * sin(w * tau). Phase, points and the leading
dimensions of the outputs broadcast together.
"""

from dataclasses import dataclass
from typing import Any

import numpy as np

from packages.core.errors import DitherError
from packages.esc.costs import CostFunction
from packages.esc.dither import DitherSpec


@dataclass(frozen=True)
class EstimatorInput:
    cost: CostFunction
    spec: DitherSpec
    theta_hat: Any
    tau: Any


def _measure(cost: CostFunction, spec: DitherSpec, theta_hat: Any, tau: Any):
    theta_hat = np.asarray(theta_hat, dtype=float)
    sines = np.sin(np.asarray(tau, dtype=float)[..., None] * spec.rates_array)
    value = cost.eval(theta_hat + spec.amplitude * spec.amps_array * sines)
    return sines, value[..., None]


def demodulate_gradient(cost: CostFunction, spec: DitherSpec, theta_hat: Any, tau: Any) -> np.ndarray:
    """g_i = 2 / (a r_i) * sin(w_i tau) * J(theta_hat + a r sin(w tau))."""
    sines, value = _measure(cost, spec, theta_hat, tau)
    return (2.0 / (spec.amplitude * spec.amps_array)) * sines * value


def demodulate_hessian(cost: CostFunction, spec: DitherSpec, theta_hat: Any, tau: Any) -> np.ndarray:
    """
    Hessian estimate from the same measurement.

    Diagonal entries use 16 / (a r_i)^2 * (sin^2(w_i tau) - 1/2) * J, off-diagonal
    entries 4 / (a^2 r_i r_j) * sin(w_i tau) sin(w_j tau) * J. The result is
    exactly symmetric.
    """
    if not spec.supports_hessian:
        raise DitherError(
            f"Rates {list(spec.rates)} are not second-order admissible; "
            "the Hessian estimate would be biased"
        )
    sines, value = _measure(cost, spec, theta_hat, tau)
    a = spec.amplitude
    scaled = sines / spec.amps_array
    estimate = (4.0 / (a * a)) * (scaled[..., :, None] * scaled[..., None, :]) * value[..., None]
    diagonal = (16.0 / (a * a * spec.amps_array ** 2)) * (sines * sines - 0.5) * value
    idx = np.arange(spec.n)
    estimate[..., idx, idx] = diagonal
    return estimate


def gradient_estimate(inp: EstimatorInput) -> np.ndarray:
    return demodulate_gradient(inp.cost, inp.spec, inp.theta_hat, inp.tau)


def hessian_estimate(inp: EstimatorInput) -> np.ndarray:
    return demodulate_hessian(inp.cost, inp.spec, inp.theta_hat, inp.tau)
