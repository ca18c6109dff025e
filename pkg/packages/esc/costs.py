"""Built-in cost functions and their growth bounds.

All callables are vectorised: a point array of shape ``(..., n)`` gives
values of shape ``(...)``, gradients of shape ``(..., n)`` and Hessians of
shape ``(..., n, n)``.
"""

import logging
from dataclasses import dataclass, field
from functools import partial
from typing import Any, Callable, Dict, Optional, Sequence

import numpy as np
from scipy import optimize

from packages.core.errors import CostError

logger = logging.getLogger(__name__)

ArrayFn = Callable[[np.ndarray], np.ndarray]

# Angular resolution of the unit-circle scan used for n = 2.
CIRCLE_SAMPLES = 1 << 14
SPHERE_SAMPLES = 200_000


@dataclass(frozen=True)
class CostFunction:
    """A smooth cost J with optional exact derivative oracles."""

    id: str
    dim: int
    func: ArrayFn
    grad_oracle: Optional[ArrayFn] = None
    hess_oracle: Optional[ArrayFn] = None
    minimizer: Optional[np.ndarray] = None
    degree: Optional[int] = None
    params: Dict[str, Any] = field(default_factory=dict)

    def _check(self, theta: Any) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if theta.shape[-1:] != (self.dim,):
            raise CostError(
                f"Cost {self.id} expects points of dimension {self.dim}, got shape {theta.shape}"
            )
        return theta

    def eval(self, theta: Any) -> np.ndarray:
        return np.asarray(self.func(self._check(theta)))

    def grad(self, theta: Any) -> np.ndarray:
        if self.grad_oracle is None:
            raise CostError(f"Cost {self.id} has no gradient oracle")
        return np.asarray(self.grad_oracle(self._check(theta)))

    def hess(self, theta: Any) -> np.ndarray:
        if self.hess_oracle is None:
            raise CostError(f"Cost {self.id} has no Hessian oracle")
        return np.asarray(self.hess_oracle(self._check(theta)))

    def describe(self) -> Dict[str, Any]:
        return {"id": self.id, "dim": self.dim, "degree": self.degree, "params": self.params}


@dataclass(frozen=True)
class GrowthBounds:
    """Constants with b1 |x|^d <= J(x) <= b2 |x|^d."""

    b1: float
    b2: float
    degree: int

    def to_dict(self) -> Dict[str, Any]:
        return {"b1": self.b1, "b2": self.b2, "degree": self.degree}


def _quartic2d_value(theta: np.ndarray) -> np.ndarray:
    t1 = theta[..., 0]
    s = t1 + theta[..., 1]
    return t1 ** 4 + s ** 4


def _quartic2d_grad(theta: np.ndarray) -> np.ndarray:
    t1 = theta[..., 0]
    s3 = (t1 + theta[..., 1]) ** 3
    return 4.0 * np.stack([t1 ** 3 + s3, s3], axis=-1)


def _quartic2d_hess(theta: np.ndarray) -> np.ndarray:
    t1 = theta[..., 0]
    s2 = (t1 + theta[..., 1]) ** 2
    row0 = np.stack([t1 ** 2 + s2, s2], axis=-1)
    row1 = np.stack([s2, s2], axis=-1)
    return 12.0 * np.stack([row0, row1], axis=-2)


def quartic2d() -> CostFunction:
    """J(x) = x1^4 + (x1 + x2)^4, minimised at the origin."""
    return CostFunction(
        id="quartic2d",
        dim=2,
        func=_quartic2d_value,
        grad_oracle=_quartic2d_grad,
        hess_oracle=_quartic2d_hess,
        minimizer=np.zeros(2),
        degree=4,
    )


def _quadratic_value(Q: np.ndarray, theta: np.ndarray) -> np.ndarray:
    return 0.5 * np.einsum("...i,ij,...j->...", theta, Q, theta)


def _quadratic_grad(Q: np.ndarray, theta: np.ndarray) -> np.ndarray:
    return theta @ Q


def _constant_hess(H: np.ndarray, theta: np.ndarray) -> np.ndarray:
    return np.broadcast_to(H, theta.shape[:-1] + H.shape)


def _sphere_value(theta: np.ndarray) -> np.ndarray:
    return np.sum(theta * theta, axis=-1)


def _sphere_grad(theta: np.ndarray) -> np.ndarray:
    return 2.0 * theta


def quadratic(Q: Any) -> CostFunction:
    """
    J(x) = x^T Q x / 2 for a symmetric positive definite Q.

    Args:
        Q: Square SPD matrix

    Returns:
        The cost, with Hessian oracle returning Q exactly
    """
    try:
        Q = np.array(Q, dtype=float)
    except (TypeError, ValueError) as e:
        raise CostError(f"Q must be a numeric square matrix: {e}")
    if Q.ndim != 2 or Q.shape[0] != Q.shape[1] or Q.shape[0] == 0:
        raise CostError(f"Q must be a non-empty square matrix, got shape {Q.shape}")
    if not np.all(np.isfinite(Q)):
        raise CostError("Q must be finite")
    scale = max(1.0, float(np.max(np.abs(Q))))
    if not np.allclose(Q, Q.T, rtol=0.0, atol=1e-12 * scale):
        raise CostError("Q must be symmetric")
    Q = 0.5 * (Q + Q.T)
    if np.linalg.eigvalsh(Q)[0] <= 0.0:
        raise CostError("Q must be positive definite")
    Q.setflags(write=False)
    n = Q.shape[0]
    return CostFunction(
        id="quadratic",
        dim=n,
        func=partial(_quadratic_value, Q),
        grad_oracle=partial(_quadratic_grad, Q),
        hess_oracle=partial(_constant_hess, Q),
        minimizer=np.zeros(n),
        degree=2,
        params={"Q": Q.tolist()},
    )


def sphere(dim: int) -> CostFunction:
    """J(x) = |x|^2 in ``dim`` dimensions."""
    if int(dim) != dim or dim < 1:
        raise CostError(f"sphere dimension must be a positive integer, got {dim}")
    dim = int(dim)
    return CostFunction(
        id="sphere",
        dim=dim,
        func=_sphere_value,
        grad_oracle=_sphere_grad,
        hess_oracle=partial(_constant_hess, 2.0 * np.eye(dim)),
        minimizer=np.zeros(dim),
        degree=2,
        params={"dim": dim},
    )


BUILTIN_COSTS = ("quartic2d", "quadratic", "sphere")


def builtin_cost(cost_id: str, Q: Optional[Sequence[Sequence[float]]] = None,
                 dim: Optional[int] = None) -> CostFunction:
    """
    Look up a built-in cost by id.

    Args:
        cost_id: One of ``quartic2d``, ``quadratic``, ``sphere``
        Q: Matrix for ``quadratic``
        dim: Dimension for ``sphere`` (defaults to 2)

    Returns:
        The cost function
    """
    if cost_id == "quartic2d":
        return quartic2d()
    if cost_id == "quadratic":
        if Q is None:
            raise CostError("Cost 'quadratic' requires a matrix Q")
        return quadratic(Q)
    if cost_id == "sphere":
        return sphere(2 if dim is None else dim)
    raise CostError(f"Unknown cost: {cost_id}", {"known": list(BUILTIN_COSTS)})


def _circle_bounds(cost: CostFunction) -> GrowthBounds:
    angles = np.linspace(0.0, 2.0 * np.pi, CIRCLE_SAMPLES, endpoint=False)
    values = cost.eval(np.stack([np.cos(angles), np.sin(angles)], axis=-1))
    spacing = angles[1]

    def on_circle(t: float, sign: float) -> float:
        return sign * float(cost.eval(np.array([np.cos(t), np.sin(t)])))

    refined = []
    for index, sign in ((int(np.argmin(values)), 1.0), (int(np.argmax(values)), -1.0)):
        centre = angles[index]
        result = optimize.minimize_scalar(
            on_circle, bounds=(centre - spacing, centre + spacing), args=(sign,),
            method="bounded", options={"xatol": 1e-12},
        )
        refined.append(sign * float(result.fun))

    b1 = min(float(values.min()), refined[0])
    b2 = max(float(values.max()), refined[1])
    return GrowthBounds(b1=b1, b2=b2, degree=int(cost.degree))


def _sphere_bounds(cost: CostFunction) -> GrowthBounds:
    rng = np.random.default_rng(0)
    directions = rng.standard_normal((SPHERE_SAMPLES, cost.dim))
    directions /= np.linalg.norm(directions, axis=-1, keepdims=True)
    values = cost.eval(directions)

    def on_sphere(u: np.ndarray, sign: float) -> float:
        return sign * float(cost.eval(u / np.linalg.norm(u)))

    refined = []
    for index, sign in ((int(np.argmin(values)), 1.0), (int(np.argmax(values)), -1.0)):
        result = optimize.minimize(on_sphere, directions[index], args=(sign,),
                                   method="Nelder-Mead",
                                   options={"xatol": 1e-12, "fatol": 1e-14})
        refined.append(sign * float(result.fun))

    b1 = min(float(values.min()), refined[0])
    b2 = max(float(values.max()), refined[1])
    return GrowthBounds(b1=b1, b2=b2, degree=int(cost.degree))


def growth_bounds(cost: CostFunction) -> GrowthBounds:
    """
    Bound a homogeneous cost between multiples of |x|^degree.

    The extrema of J on the unit sphere give the constants: a dense scan
    followed by local refinement around the best samples.

    Args:
        cost: A cost with a known homogeneity degree

    Returns:
        Growth bounds with b1 <= b2
    """
    if cost.degree is None:
        raise CostError(f"Cost {cost.id} is not homogeneous; growth bounds are undefined")
    if cost.dim == 1:
        value = float(cost.eval(np.array([1.0])))
        other = float(cost.eval(np.array([-1.0])))
        bounds = GrowthBounds(min(value, other), max(value, other), int(cost.degree))
    elif cost.dim == 2:
        bounds = _circle_bounds(cost)
    else:
        bounds = _sphere_bounds(cost)
    logger.debug(f"Growth bounds for {cost.id}: b1={bounds.b1:.6g}, b2={bounds.b2:.6g}")
    return bounds


def lie_derivative_model_based(cost: CostFunction, theta: Any, k: float = 1.0) -> np.ndarray:
    """dJ/dt along the model-based gradient flow: -k |grad J|^2."""
    g = cost.grad(theta)
    return -k * np.sum(g * g, axis=-1)
