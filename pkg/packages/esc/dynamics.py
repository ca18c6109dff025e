"""Right-hand sides of the gradient and Newton extremum seeking flows.

Each algorithm comes in three modes:

- ``model-free``: driven by the demodulated estimates at phase ``w * t``
- ``average``: the period average of the model-free field at a frozen state
- ``model-based``: the same flow driven by the exact gradient and Hessian

The Newton flow carries an inverse-Hessian estimate Gamma, stored either
directly as vech(Gamma) or in log coordinates as vech(ln Gamma).
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, Optional, Tuple

import numpy as np

from packages.core.errors import ConfigError, CostError, DitherError, MatrixError
from packages.esc.averaging import QuadratureConfig, average_rhs, common_period
from packages.esc.costs import CostFunction
from packages.esc.dither import DitherSpec
from packages.esc.estimators import demodulate_gradient, demodulate_hessian
from packages.esc.matrix_calculus import (
    exp_sym,
    log_coordinate_rate,
    log_spd,
    symmetrize,
    unvech,
    vech,
    vech_dim,
)

logger = logging.getLogger(__name__)


class Variant(str, Enum):
    GESC = "gesc"
    NESC = "nesc"
    NESC_LOG = "nesc-log"


class Mode(str, Enum):
    MODEL_FREE = "model-free"
    AVERAGE = "average"
    MODEL_BASED = "model-based"


def algorithm_name(variant: Variant, mode: Mode) -> str:
    """Registry name, e.g. ``gesc``, ``nesc-average``, ``nesc-log-model-based``."""
    variant, mode = Variant(variant), Mode(mode)
    return variant.value if mode is Mode.MODEL_FREE else f"{variant.value}-{mode.value}"


@dataclass(frozen=True)
class EscParams:
    """Gain k and Riccati filter rate omega_l."""

    k: float = 1.0
    omega_l: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.k) and self.k > 0.0):
            raise ConfigError(f"Gain k must be positive, got {self.k}")
        if not (np.isfinite(self.omega_l) and self.omega_l > 0.0):
            raise ConfigError(f"Filter rate omega_l must be positive, got {self.omega_l}")


def _require_spd(G: np.ndarray, name: str) -> None:
    if np.any(np.linalg.eigvalsh(symmetrize(G))[..., 0] <= 0.0):
        raise MatrixError(f"{name} is not positive definite")


def _matvec(M: np.ndarray, v: np.ndarray) -> np.ndarray:
    return (M @ v[..., None])[..., 0]


def _riccati(Gamma: np.ndarray, H: np.ndarray, params: EscParams) -> np.ndarray:
    return params.omega_l * symmetrize(Gamma - Gamma @ H @ Gamma)


def gesc_model_free_rhs(tau: Any, theta_hat: Any, cost: CostFunction, spec: DitherSpec,
                        params: EscParams) -> np.ndarray:
    """d theta_hat / dt = -k * g_hat(tau)."""
    return -params.k * demodulate_gradient(cost, spec, theta_hat, tau)


def gesc_average_rhs(theta_bar: Any, cost: CostFunction, spec: DitherSpec, params: EscParams,
                     cfg: Optional[QuadratureConfig] = None) -> np.ndarray:
    """d theta_bar / dt = -k * (period average of g_hat); independent of the base frequency."""
    return average_rhs(
        lambda tau, th: gesc_model_free_rhs(tau, th, cost, spec, params),
        theta_bar, common_period(spec.rates), cfg,
    )


def gesc_model_based_rhs(vartheta: Any, cost: CostFunction, params: EscParams) -> np.ndarray:
    """d vartheta / dt = -k * grad J(vartheta)."""
    return -params.k * cost.grad(vartheta)


def _nesc_direct(tau: Any, theta_hat: np.ndarray, Gamma: np.ndarray, cost: CostFunction,
                 spec: DitherSpec, params: EscParams) -> Tuple[np.ndarray, np.ndarray]:
    g = demodulate_gradient(cost, spec, theta_hat, tau)
    H = demodulate_hessian(cost, spec, theta_hat, tau)
    return -params.k * _matvec(Gamma, g), _riccati(Gamma, H, params)


def nesc_model_free_rhs(tau: Any, theta_hat: Any, Gamma_hat: Any, cost: CostFunction,
                        spec: DitherSpec, params: EscParams) -> Tuple[np.ndarray, np.ndarray]:
    """
    Model-free Newton flow.

    Returns:
        (d theta_hat/dt, d Gamma_hat/dt) with
        d theta_hat/dt = -k Gamma g_hat and
        d Gamma_hat/dt = omega_l (Gamma - Gamma H_hat Gamma)
    """
    Gamma_hat = np.asarray(Gamma_hat, dtype=float)
    _require_spd(Gamma_hat, "Gamma_hat")
    return _nesc_direct(tau, np.asarray(theta_hat, dtype=float), Gamma_hat, cost, spec, params)


def nesc_model_based_rhs(vartheta: Any, Pi: Any, cost: CostFunction,
                         params: EscParams) -> Tuple[np.ndarray, np.ndarray]:
    """Newton flow with exact oracles; Pi plays the role of Gamma."""
    Pi = np.asarray(Pi, dtype=float)
    _require_spd(Pi, "Pi")
    vartheta = np.asarray(vartheta, dtype=float)
    return -params.k * _matvec(Pi, cost.grad(vartheta)), _riccati(Pi, cost.hess(vartheta), params)


def _nesc_average(theta_bar: np.ndarray, Gamma_bar: np.ndarray, cost: CostFunction,
                  spec: DitherSpec, params: EscParams,
                  cfg: Optional[QuadratureConfig]) -> Tuple[np.ndarray, np.ndarray]:
    n = spec.n
    n_sq = n * n

    def field(tau, x):
        d_theta, d_gamma = _nesc_direct(tau, x[..., :n], x[..., n:].reshape(x.shape[:-1] + (n, n)),
                                        cost, spec, params)
        d_gamma = d_gamma.reshape(d_gamma.shape[:-2] + (n_sq,))
        d_theta = np.broadcast_to(d_theta, d_gamma.shape[:-1] + (n,))
        return np.concatenate([d_theta, d_gamma], axis=-1)

    x = np.concatenate([theta_bar, Gamma_bar.reshape(Gamma_bar.shape[:-2] + (n_sq,))], axis=-1)
    averaged = average_rhs(field, x, common_period(spec.rates), cfg)
    return averaged[..., :n], symmetrize(averaged[..., n:].reshape(averaged.shape[:-1] + (n, n)))


def nesc_average_rhs(theta_bar: Any, Gamma_bar: Any, cost: CostFunction, spec: DitherSpec,
                     params: EscParams,
                     cfg: Optional[QuadratureConfig] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Period average of the model-free Newton flow at a frozen (theta, Gamma)."""
    Gamma_bar = np.asarray(Gamma_bar, dtype=float)
    _require_spd(Gamma_bar, "Gamma_bar")
    return _nesc_average(np.asarray(theta_bar, dtype=float), Gamma_bar, cost, spec, params, cfg)


def nesc_log_rhs(tau: Any, theta_hat: Any, gamma_hat: Any, cost: CostFunction,
                 spec: Optional[DitherSpec], params: EscParams, mode: Any = Mode.MODEL_FREE,
                 cfg: Optional[QuadratureConfig] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Newton flow in log coordinates gamma = vech(ln Gamma).

    Gamma is recovered with exp_sym, the direct flow is evaluated in the
    requested mode and its Gamma rate is pushed through the log-coordinate
    rate map. ``tau`` is ignored outside model-free mode.
    """
    mode = Mode(mode)
    theta_hat = np.asarray(theta_hat, dtype=float)
    Gamma = exp_sym(unvech(gamma_hat))
    if mode is Mode.MODEL_FREE:
        d_theta, d_Gamma = _nesc_direct(tau, theta_hat, Gamma, cost, spec, params)
    elif mode is Mode.AVERAGE:
        d_theta, d_Gamma = _nesc_average(theta_hat, Gamma, cost, spec, params, cfg)
    else:
        d_theta, d_Gamma = nesc_model_based_rhs(theta_hat, Gamma, cost, params)
    Gamma = np.broadcast_to(Gamma, d_Gamma.shape)
    return d_theta, log_coordinate_rate(Gamma, d_Gamma)


class EscSystem:
    """
    One extremum seeking algorithm bound to a cost, dither and gains.

    The state is a flat vector: theta for the gradient flow, theta followed by
    vech(Gamma) or vech(ln Gamma) for the Newton flows. ``rhs`` accepts a
    stack of states with shape ``(..., state_dim)``.
    """

    def __init__(self, variant: Any, mode: Any, cost: CostFunction,
                 params: Optional[EscParams] = None, dither: Optional[DitherSpec] = None,
                 quadrature: Optional[QuadratureConfig] = None):
        self.variant = Variant(variant)
        self.mode = Mode(mode)
        self.cost = cost
        self.params = params or EscParams()
        self.dither = dither
        self.quadrature = quadrature or QuadratureConfig()
        self.n = cost.dim

        if self.mode is Mode.MODEL_BASED:
            if cost.grad_oracle is None:
                raise CostError(f"Model-based {self.variant.value} needs a gradient oracle for {cost.id}")
            if self.variant is not Variant.GESC and cost.hess_oracle is None:
                raise CostError(f"Model-based {self.variant.value} needs a Hessian oracle for {cost.id}")
        else:
            if dither is None:
                raise DitherError(f"{self.name} needs a dither spec")
            if dither.n != cost.dim:
                raise DitherError(
                    f"Dither has {dither.n} channels but cost {cost.id} has dimension {cost.dim}"
                )
            if self.variant is not Variant.GESC and not dither.supports_hessian:
                raise DitherError(
                    f"{self.name} needs second-order admissible rates, got {list(dither.rates)}"
                )

    @property
    def name(self) -> str:
        return algorithm_name(self.variant, self.mode)

    @property
    def state_dim(self) -> int:
        return self.n if self.variant is Variant.GESC else self.n + vech_dim(self.n)

    @property
    def phase_dependent(self) -> bool:
        return self.mode is Mode.MODEL_FREE

    @property
    def base_frequency(self) -> Optional[float]:
        return self.dither.base_frequency if self.phase_dependent else None

    @property
    def max_angular_frequency(self) -> Optional[float]:
        if not self.phase_dependent:
            return None
        return float(np.max(np.abs(self.dither.rates_array))) * self.dither.base_frequency

    def split(self, x: Any) -> Tuple[np.ndarray, Optional[np.ndarray]]:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.state_dim:
            raise ConfigError(f"{self.name} expects states of length {self.state_dim}, got {x.shape[-1]}")
        if self.variant is Variant.GESC:
            return x, None
        return x[..., :self.n], x[..., self.n:]

    def initial_state(self, theta0: Any, Gamma0: Any = None) -> np.ndarray:
        """Pack theta0 and an SPD Gamma0 (identity by default) into a state vector."""
        theta0 = np.asarray(theta0, dtype=float)
        if theta0.shape[-1] != self.n:
            raise ConfigError(f"theta0 must have length {self.n}")
        if self.variant is Variant.GESC:
            return theta0.copy()
        Gamma0 = np.eye(self.n) if Gamma0 is None else np.asarray(Gamma0, dtype=float)
        aux = log_spd(Gamma0) if self.variant is Variant.NESC_LOG else Gamma0
        if self.variant is Variant.NESC:
            _require_spd(Gamma0, "Gamma0")
        aux = np.broadcast_to(vech(aux), theta0.shape[:-1] + (vech_dim(self.n),))
        return np.concatenate([theta0, aux], axis=-1)

    def gamma_matrix(self, x: Any) -> Optional[np.ndarray]:
        """Inverse-Hessian estimate carried by a Newton state."""
        _, aux = self.split(x)
        if aux is None:
            return None
        return exp_sym(unvech(aux)) if self.variant is Variant.NESC_LOG else unvech(aux)

    def equilibrium(self) -> Optional[np.ndarray]:
        """State at the minimiser, or None when it is not available in closed form."""
        if self.cost.minimizer is None:
            return None
        theta = np.asarray(self.cost.minimizer, dtype=float)
        if self.variant is Variant.GESC:
            return theta.copy()
        if self.cost.hess_oracle is None:
            return None
        H = self.cost.hess(theta)
        if np.linalg.eigvalsh(H)[0] <= 0.0:
            return None
        return self.initial_state(theta, np.linalg.inv(H))

    def _pack(self, d_theta: np.ndarray, d_aux: np.ndarray) -> np.ndarray:
        d_theta = np.broadcast_to(d_theta, d_aux.shape[:-1] + (self.n,))
        return np.concatenate([d_theta, d_aux], axis=-1)

    def phase_field(self, tau: Any, x: Any) -> np.ndarray:
        """Model-free field at phase ``tau``, in wall-time units."""
        theta, aux = self.split(x)
        if self.variant is Variant.GESC:
            return gesc_model_free_rhs(tau, theta, self.cost, self.dither, self.params)
        if self.variant is Variant.NESC:
            d_theta, d_Gamma = nesc_model_free_rhs(tau, theta, unvech(aux), self.cost, self.dither,
                                                   self.params)
            return self._pack(d_theta, vech(d_Gamma))
        d_theta, d_gamma = nesc_log_rhs(tau, theta, aux, self.cost, self.dither, self.params)
        return self._pack(d_theta, d_gamma)

    def rhs(self, t: Any, x: Any) -> np.ndarray:
        """Field at wall time ``t``."""
        if self.mode is Mode.MODEL_FREE:
            return self.phase_field(self.dither.base_frequency * np.asarray(t, dtype=float), x)

        theta, aux = self.split(x)
        if self.variant is Variant.GESC:
            if self.mode is Mode.AVERAGE:
                return gesc_average_rhs(theta, self.cost, self.dither, self.params, self.quadrature)
            return gesc_model_based_rhs(theta, self.cost, self.params)
        if self.variant is Variant.NESC:
            Gamma = unvech(aux)
            if self.mode is Mode.AVERAGE:
                d_theta, d_Gamma = nesc_average_rhs(theta, Gamma, self.cost, self.dither,
                                                    self.params, self.quadrature)
            else:
                d_theta, d_Gamma = nesc_model_based_rhs(theta, Gamma, self.cost, self.params)
            return self._pack(d_theta, vech(d_Gamma))
        d_theta, d_gamma = nesc_log_rhs(None, theta, aux, self.cost, self.dither, self.params,
                                        self.mode, self.quadrature)
        return self._pack(d_theta, d_gamma)

    def __call__(self, t: Any, x: Any) -> np.ndarray:
        return self.rhs(t, x)

    def describe(self) -> Dict[str, Any]:
        return {
            "algorithm": self.name,
            "variant": self.variant.value,
            "mode": self.mode.value,
            "cost": self.cost.describe(),
            "params": {"k": self.params.k, "omega_l": self.params.omega_l},
            "dither": self.dither.to_dict() if self.dither is not None else None,
            "state_dim": self.state_dim,
        }
