"""Deterministic RK4 integration for single states and batches of states.

``rk4`` marches with a fixed step. ``rk4-doubling`` compares one full step
with two half steps and adapts the step from that difference; it is used for
the phase-free systems, whose stiffness grows with the dither amplitude.

A batch is a ``(B, m)`` array of initial states. Rows that cross the
divergence cutoff are frozen at their last finite state and flagged; the
other rows keep going.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, List, Optional, Tuple, Union

import numpy as np

from packages.core.errors import ConfigError, IntegrationError

logger = logging.getLogger(__name__)

Rhs = Callable[[float, np.ndarray], np.ndarray]


class Method(str, Enum):
    RK4 = "rk4"
    RK4_DOUBLING = "rk4-doubling"


@dataclass
class IntegratorConfig:
    t_span: Tuple[float, float]
    step: Union[float, str] = "auto"
    method: Method = Method.RK4
    record_stride: int = 1
    steps_per_cycle: int = 40
    divergence_cutoff: float = 1e12
    rtol: float = 1e-8
    atol: float = 1e-10
    max_steps: int = 20_000_000
    stop_on_divergence: bool = False

    def __post_init__(self):
        self.method = Method(self.method)
        t0, t1 = (float(v) for v in self.t_span)
        if not (math.isfinite(t0) and math.isfinite(t1)) or t1 <= t0:
            raise ConfigError(f"t_span must satisfy t0 < t1, got {self.t_span}")
        self.t_span = (t0, t1)
        if self.step != "auto":
            self.step = float(self.step)
            if not (math.isfinite(self.step) and self.step > 0.0):
                raise ConfigError(f"Step must be positive or 'auto', got {self.step}")
        if self.record_stride < 1:
            raise ConfigError("record_stride must be at least 1")
        if self.steps_per_cycle < 1:
            raise ConfigError("steps_per_cycle must be at least 1")

    @classmethod
    def from_settings(cls, t_span: Tuple[float, float], settings: Optional[Dict[str, Any]] = None,
                      **overrides: Any) -> "IntegratorConfig":
        settings = dict(settings or {})
        settings.update({k: v for k, v in overrides.items() if v is not None})
        known = {
            "step", "method", "record_stride", "steps_per_cycle", "divergence_cutoff",
            "rtol", "atol", "max_steps", "stop_on_divergence",
        }
        return cls(t_span=t_span, **{k: v for k, v in settings.items() if k in known})

    def to_dict(self) -> Dict[str, Any]:
        return {
            "t_span": list(self.t_span),
            "step": self.step,
            "method": self.method.value,
            "record_stride": self.record_stride,
            "steps_per_cycle": self.steps_per_cycle,
            "divergence_cutoff": self.divergence_cutoff,
            "rtol": self.rtol,
            "atol": self.atol,
        }


@dataclass
class Trajectory:
    """
    Sampled solution.

    ``states`` has shape ``(N, m)`` for a single initial state and
    ``(N, B, m)`` for a batch. ``diverged`` and ``divergence_time`` hold one
    entry per row.
    """

    times: np.ndarray
    states: np.ndarray
    diverged: np.ndarray
    divergence_time: np.ndarray
    meta: Dict[str, Any] = field(default_factory=dict)

    @property
    def batched(self) -> bool:
        return self.states.ndim == 3

    @property
    def any_diverged(self) -> bool:
        return bool(np.any(self.diverged))

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def norms(self, center: Any = None) -> np.ndarray:
        states = self.states if center is None else self.states - np.asarray(center, dtype=float)
        return np.linalg.norm(states, axis=-1)


class TrajectoryMonitor:
    """
    Per-step watch on the distance to ``center``.

    Tracks the largest distance, the first time the distance drops below
    ``radius`` and the last time it was at or above ``radius``. With
    ``stop_when_outside`` set, integration stops as soon as any row is at or
    outside the radius, the initial state included.
    """

    def __init__(self, radius: float, center: Any = None, stop_when_outside: bool = False):
        self.radius = float(radius)
        self.center = None if center is None else np.asarray(center, dtype=float)
        self.stop_when_outside = stop_when_outside
        self.max_distance: Optional[np.ndarray] = None
        self.last_outside: Optional[np.ndarray] = None
        self.first_inside: Optional[np.ndarray] = None
        self.tripped = False

    def distances(self, x: np.ndarray) -> np.ndarray:
        return np.linalg.norm(x if self.center is None else x - self.center, axis=-1)

    def update(self, t: float, x: np.ndarray, active: np.ndarray) -> None:
        d = np.atleast_1d(self.distances(x))
        if self.max_distance is None:
            self.max_distance = np.zeros_like(d)
            self.last_outside = np.full(d.shape, -np.inf)
            self.first_inside = np.full(d.shape, np.nan)
        self.max_distance = np.where(active, np.maximum(self.max_distance, d), self.max_distance)
        outside = active & (d >= self.radius)
        self.last_outside[outside] = t
        entering = active & ~outside & np.isnan(self.first_inside)
        self.first_inside[entering] = t
        if self.stop_when_outside and np.any(outside):
            self.tripped = True

    def to_dict(self) -> Dict[str, Any]:
        return {
            "radius": self.radius,
            "max_distance": None if self.max_distance is None else self.max_distance.tolist(),
            "last_outside": None if self.last_outside is None else self.last_outside.tolist(),
        }


def _as_rhs(system: Any) -> Rhs:
    if hasattr(system, "rhs"):
        return system.rhs
    if callable(system):
        return system
    raise ConfigError("System must be callable or expose rhs(t, x)")


def auto_step(system: Any, cfg: IntegratorConfig) -> float:
    """
    Default fixed step: 2 pi / (w * max|w_i| * steps_per_cycle).

    Phase-free systems have no natural step; for them this returns one
    thousandth of the time span as a starting guess.
    """
    omega_max = getattr(system, "max_angular_frequency", None)
    if omega_max:
        return 2.0 * math.pi / (omega_max * cfg.steps_per_cycle)
    t0, t1 = cfg.t_span
    return (t1 - t0) / 1000.0


def capped_record_stride(system: Any, cfg: IntegratorConfig, max_records: int) -> int:
    """Smallest stride, at least ``cfg.record_stride``, keeping a run under ``max_records`` samples."""
    h = auto_step(system, cfg) if cfg.step == "auto" else float(cfg.step)
    t0, t1 = cfg.t_span
    n_steps = math.ceil((t1 - t0) / h - 1e-9)
    return max(cfg.record_stride, math.ceil(n_steps / max(1, int(max_records))))


def _rk4_step(f: Rhs, t: float, x: np.ndarray, h: float, k1: np.ndarray) -> np.ndarray:
    half = 0.5 * h
    k2 = f(t + half, x + half * k1)
    k3 = f(t + half, x + half * k2)
    k4 = f(t + h, x + h * k3)
    return x + (h / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)


class _Stepper:
    """Shared bookkeeping: activity mask, divergence flags, records, monitor."""

    def __init__(self, f: Rhs, x0: np.ndarray, cfg: IntegratorConfig,
                 monitor: Optional[TrajectoryMonitor]):
        self.f = f
        self.cfg = cfg
        self.monitor = monitor
        self.single = x0.ndim == 1
        self.x = np.array(x0[None, :] if self.single else x0, dtype=float)
        rows = self.x.shape[0]
        self.active = np.ones(rows, dtype=bool)
        self.diverged = np.zeros(rows, dtype=bool)
        self.divergence_time = np.full(rows, np.nan)
        self.times: List[float] = []
        self.states: List[np.ndarray] = []

    def evaluate(self, t: float, x: np.ndarray) -> np.ndarray:
        k = np.asarray(self.f(t, x), dtype=float)
        if k.shape != x.shape:
            k = np.broadcast_to(k, x.shape)
        if not np.all(np.isfinite(k[self.active])):
            raise IntegrationError(f"Non-finite right-hand side at t={t:.17g}", time=t)
        return k

    def record(self, t: float) -> None:
        self.times.append(t)
        self.states.append(self.x.copy())

    def accept(self, t_new: float, candidate: np.ndarray) -> None:
        with np.errstate(over="ignore", invalid="ignore"):
            norms = np.linalg.norm(candidate, axis=-1)
        blown = self.active & ~(norms <= self.cfg.divergence_cutoff)
        if np.any(blown):
            self.diverged[blown] = True
            self.divergence_time[blown] = t_new
            self.active &= ~blown
            logger.debug(f"{int(blown.sum())} trajectories diverged at t={t_new:.6g}")
        self.x = np.where(self.active[:, None], candidate, self.x)
        if self.monitor is not None:
            self.monitor.update(t_new, self.x, self.active)

    @property
    def finished(self) -> bool:
        if not np.any(self.active):
            return True
        if self.cfg.stop_on_divergence and np.any(self.diverged):
            return True
        return self.monitor is not None and self.monitor.tripped

    def trajectory(self, meta: Dict[str, Any]) -> Trajectory:
        states = np.array(self.states)
        if self.single:
            states = states[:, 0, :]
        return Trajectory(
            times=np.array(self.times),
            states=states,
            diverged=self.diverged.copy(),
            divergence_time=self.divergence_time.copy(),
            meta=meta,
        )


def _fixed(stepper: _Stepper, cfg: IntegratorConfig, h: float) -> Dict[str, Any]:
    t0, t1 = cfg.t_span
    n_steps = max(1, math.ceil((t1 - t0) / h - 1e-9))
    if n_steps > cfg.max_steps:
        raise IntegrationError(f"{n_steps} steps exceed max_steps={cfg.max_steps}", time=t0)
    h = (t1 - t0) / n_steps
    f = stepper.f
    stepper.record(t0)
    completed = 0
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(n_steps):
            t = t0 + i * h
            x = stepper.x
            k1 = stepper.evaluate(t, x)
            candidate = _rk4_step(f, t, x, h, k1)
            t_new = t0 + (i + 1) * h
            stepper.accept(t_new, candidate)
            completed = i + 1
            if stepper.finished:
                stepper.record(t_new)
                break
            if completed % cfg.record_stride == 0 or completed == n_steps:
                stepper.record(t_new)
    return {"step": h, "steps": completed, "rejected": 0}


def _doubling(stepper: _Stepper, cfg: IntegratorConfig, h: float) -> Dict[str, Any]:
    t0, t1 = cfg.t_span
    f = stepper.f
    t = t0
    accepted = rejected = 0
    stepper.record(t0)
    with np.errstate(over="ignore", invalid="ignore"):
        while t < t1 and not stepper.finished:
            if accepted + rejected >= cfg.max_steps:
                raise IntegrationError(f"Exceeded max_steps={cfg.max_steps}", time=t)
            x = stepper.x
            h = min(h, t1 - t)
            if h <= 1e-14 * max(1.0, abs(t)):
                raise IntegrationError(f"Step size underflow at t={t:.17g}", time=t)
            k1 = stepper.evaluate(t, x)
            full = _rk4_step(f, t, x, h, k1)
            half = _rk4_step(f, t, x, 0.5 * h, k1)
            double = _rk4_step(f, t + 0.5 * h, half, 0.5 * h, f(t + 0.5 * h, half))

            active = stepper.active
            diff = np.max(np.abs(double - full), axis=-1)[active]
            scale = cfg.atol + cfg.rtol * np.max(np.abs(double), axis=-1)[active]
            ratio = diff / (15.0 * scale)
            err = float(np.max(ratio)) if ratio.size else 0.0
            if not math.isfinite(err):
                # Overflow inside the step: shrink and retry, the cutoff decides divergence.
                err = 1e6
                if h <= 1e-12 * (t1 - t0):
                    stepper.accept(t + h, double)
                    t += h
                    accepted += 1
                    stepper.record(t)
                    continue

            if err <= 1.0:
                t = t1 if t1 - (t + h) <= 1e-12 * (t1 - t0) else t + h
                stepper.accept(t, double)
                accepted += 1
                if accepted % cfg.record_stride == 0 or t >= t1 or stepper.finished:
                    stepper.record(t)
            else:
                rejected += 1
            factor = 4.0 if err == 0.0 else min(4.0, max(0.2, 0.9 * err ** -0.2))
            h *= factor
    if stepper.times[-1] != t:
        stepper.record(t)
    return {"steps": accepted, "rejected": rejected}


def integrate(system: Any, x0: Any, cfg: IntegratorConfig,
              monitor: Optional[TrajectoryMonitor] = None) -> Trajectory:
    """
    Integrate ``dx/dt = rhs(t, x)`` over ``cfg.t_span``.

    Args:
        system: An object with ``rhs(t, x)`` (such as an ``EscSystem``) or a callable
        x0: Initial state ``(m,)`` or batch ``(B, m)``
        cfg: Integrator settings
        monitor: Optional per-step distance monitor

    Returns:
        The sampled trajectory; the first sample is ``x0`` at ``t0``

    Raises:
        IntegrationError: if the right-hand side is non-finite at an accepted state
    """
    x0 = np.asarray(x0, dtype=float)
    if x0.ndim not in (1, 2) or x0.shape[-1] == 0:
        raise ConfigError(f"x0 must have shape (m,) or (B, m), got {x0.shape}")
    if not np.all(np.isfinite(x0)):
        raise ConfigError("x0 must be finite")

    f = _as_rhs(system)
    stepper = _Stepper(f, x0, cfg, monitor)
    if monitor is not None:
        monitor.update(cfg.t_span[0], stepper.x, stepper.active)

    method = cfg.method
    if cfg.step == "auto" and getattr(system, "phase_dependent", True) is False:
        method = Method.RK4_DOUBLING
    h = auto_step(system, cfg) if cfg.step == "auto" else float(cfg.step)

    logger.debug(f"Integrating over {cfg.t_span} with {method.value}, initial step {h:.3g}")
    if method is Method.RK4:
        stats = _fixed(stepper, cfg, h)
    else:
        stats = _doubling(stepper, cfg, h)

    meta = {"config": cfg.to_dict(), "method": method.value, **stats}
    describe = getattr(system, "describe", None)
    if callable(describe):
        meta["system"] = describe()
    traj = stepper.trajectory(meta)
    if traj.any_diverged:
        logger.info(f"Divergence in {int(traj.diverged.sum())} of {traj.diverged.size} trajectories")
    return traj
