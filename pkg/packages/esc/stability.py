"""Numerical evidence for the stability behaviour of extremum seeking flows.

- ``linearize`` / ``spectrum``: Jacobians and eigenvalues at an equilibrium
- ``ultimate_bound`` / ``sgpas_sweep``: tail suprema of trajectories across amplitudes
- ``closeness_experiment``: model-free versus average trajectories across frequencies
- ``certify_practical_stability``: grid search for (a*, w*, T) certificates

A certificate is evidence on a finite set of initial conditions and a finite
horizon, not a proof.
"""

import itertools
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from packages.core.config import DEFAULT_CONFIG
from packages.core.errors import (
    ConfigError,
    IntegrationError,
    MatrixError,
    QuadratureError,
    StabilityError,
)
from packages.esc.averaging import QuadratureConfig
from packages.esc.costs import CostFunction, GrowthBounds
from packages.esc.dither import DitherSpec
from packages.esc.dynamics import EscParams, EscSystem, Mode, Variant
from packages.esc.integrator import (
    IntegratorConfig,
    Method,
    Trajectory,
    TrajectoryMonitor,
    auto_step,
    capped_record_stride,
    integrate,
)

logger = logging.getLogger(__name__)

Field = Callable[[np.ndarray], np.ndarray]

# Failures that sink one grid cell rather than the whole certificate.
CELL_FAILURES = (IntegrationError, QuadratureError, MatrixError)


class CertMode(str, Enum):
    PS = "PS"
    PB = "PB"
    PUA = "delta-PUA"


def linearize(field: Field, x_star: Any, h: float = 1e-4) -> np.ndarray:
    """
    Central-difference Jacobian of ``field`` at ``x_star``.

    Column i is (field(x* + h e_i) - field(x* - h e_i)) / (2h).
    """
    if not h > 0.0:
        raise StabilityError(f"Linearisation step must be positive, got {h}")
    x_star = np.asarray(x_star, dtype=float)
    if x_star.ndim != 1:
        raise StabilityError("x_star must be a single state vector")
    m = x_star.size
    jacobian = np.empty((m, m))
    for i in range(m):
        offset = np.zeros(m)
        offset[i] = h
        column = (np.asarray(field(x_star + offset)) - np.asarray(field(x_star - offset))) / (2.0 * h)
        if not np.all(np.isfinite(column)):
            raise StabilityError(f"Non-finite field value while differentiating along axis {i}")
        jacobian[:, i] = column
    return jacobian


def spectrum(M: Any) -> np.ndarray:
    """Eigenvalues sorted by real part, then imaginary part, both descending."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ConfigError(f"spectrum needs a square matrix, got shape {M.shape}")
    values = np.linalg.eigvals(M).astype(complex)
    order = np.lexsort((-values.imag, -values.real))
    return values[order]


def quadratic_lyapunov_rate(field: Field, x: Any) -> np.ndarray:
    """Derivative of |x|^2 / 2 along ``field``."""
    x = np.asarray(x, dtype=float)
    return np.sum(x * np.asarray(field(x)), axis=-1)


def ultimate_bounds(traj: Trajectory, tail_fraction: float = 0.2, center: Any = None) -> np.ndarray:
    """
    Per-row supremum of the distance to ``center`` over the trailing part of the horizon.

    Diverged rows get +inf.
    """
    if not 0.0 < tail_fraction <= 1.0:
        raise StabilityError(f"tail_fraction must lie in (0, 1], got {tail_fraction}")
    times = traj.times
    span = times[-1] - times[0]
    start = times[-1] - tail_fraction * span
    tail = times >= start - 1e-12 * max(1.0, abs(span))
    bounds = np.max(traj.norms(center)[tail], axis=0)
    return np.where(traj.diverged, np.inf, bounds) if traj.batched else (
        np.inf if traj.any_diverged else bounds)


def ultimate_bound(traj: Trajectory, tail_fraction: float = 0.2, center: Any = None) -> float:
    return float(np.max(ultimate_bounds(traj, tail_fraction, center)))


def gamma_gain(a: float, bounds: GrowthBounds) -> float:
    """Ultimate-bound gain 3 b1^(-3/4) b2^(1/4) a for quartic growth."""
    return 3.0 * bounds.b1 ** -0.75 * bounds.b2 ** 0.25 * a


def decay_radius(a: float, b1: float, sigma: float) -> float:
    """Radius a sqrt(sigma / (2 b1)) outside which the quartic decay dominates."""
    return a * math.sqrt(sigma / (2.0 * b1))


def general_gain(a: float, bounds: GrowthBounds, A: Any) -> float:
    """Gain for an arbitrary linear residual a^2 A theta, via the largest singular value of A."""
    sigma = float(np.linalg.norm(np.asarray(A, dtype=float), 2))
    return (bounds.b2 / bounds.b1) ** 0.25 * decay_radius(a, bounds.b1, sigma)


def ring_samples(c: float, dim: int, ring_points: int = 16, interior_points: int = 16,
                 seed: int = 0, center: Any = None) -> np.ndarray:
    """
    Deterministic stand-in for the ball of radius ``c``.

    For every coordinate plane: ``ring_points`` evenly spaced points on the
    circle of radius ``c`` and ``interior_points`` seeded uniform points
    inside the disc.
    """
    if not c > 0.0:
        raise StabilityError(f"Sampling radius must be positive, got {c}")
    if dim < 1:
        raise StabilityError(f"Dimension must be positive, got {dim}")
    rng = np.random.default_rng(seed)
    blocks = []
    if dim == 1:
        blocks.append(c * np.resize([1.0, -1.0], ring_points)[:, None])
        blocks.append(rng.uniform(-c, c, size=(interior_points, 1)))
    for i, j in itertools.combinations(range(dim), 2):
        angles = 2.0 * np.pi * np.arange(ring_points) / ring_points
        ring = np.zeros((ring_points, dim))
        ring[:, i] = c * np.cos(angles)
        ring[:, j] = c * np.sin(angles)
        radii = c * np.sqrt(rng.uniform(size=interior_points))
        phases = rng.uniform(0.0, 2.0 * np.pi, size=interior_points)
        interior = np.zeros((interior_points, dim))
        interior[:, i] = radii * np.cos(phases)
        interior[:, j] = radii * np.sin(phases)
        blocks.extend([ring, interior])
    samples = np.vstack(blocks)
    return samples if center is None else samples + np.asarray(center, dtype=float)


@dataclass
class CellOutcome:
    """Result for one (a, w, x0) triple."""

    a: float
    omega: Optional[float]
    x0: List[float]
    bound: float
    max_norm: float
    entered_at: Optional[float] = None
    diverged: bool = False
    satisfied: Optional[bool] = None

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class StabilityReport:
    kind: str
    query: Dict[str, Any]
    grid: Dict[str, Any]
    cells: List[CellOutcome] = field(default_factory=list)
    thresholds: Dict[str, Any] = field(default_factory=dict)
    verdict: bool = False
    notes: List[str] = field(default_factory=list)
    details: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kind": self.kind,
            "query": self.query,
            "grid": self.grid,
            "cells": [cell.to_dict() for cell in self.cells],
            "thresholds": self.thresholds,
            "verdict": self.verdict,
            "notes": self.notes,
            "details": self.details,
        }


def _system_gain(system: Any, default: float) -> float:
    params = getattr(system, "params", None)
    return float(getattr(params, "k", default))


def _system_center(system: Any, center: Any) -> Optional[np.ndarray]:
    if center is not None:
        return np.asarray(center, dtype=float)
    equilibrium = getattr(system, "equilibrium", None)
    return equilibrium() if callable(equilibrium) else None


def _initial_batch(system: Any, initial: np.ndarray) -> np.ndarray:
    state_dim = getattr(system, "state_dim", initial.shape[-1])
    if initial.shape[-1] != state_dim and hasattr(system, "initial_state"):
        return system.initial_state(initial)
    return initial


def _integrator_config(system: Any, t_span: Tuple[float, float], settings: Dict[str, Any],
                       rtol: Optional[float] = None, atol: Optional[float] = None,
                       max_records: Optional[int] = None,
                       stop_on_divergence: bool = False) -> IntegratorConfig:
    integ = settings.get("integrator", DEFAULT_CONFIG["integrator"])
    cfg = IntegratorConfig.from_settings(
        t_span, integ, step="auto", rtol=rtol, atol=atol, stop_on_divergence=stop_on_divergence,
    )
    if getattr(system, "phase_dependent", False):
        cfg.method = Method.RK4
        if max_records:
            cfg.record_stride = capped_record_stride(system, cfg, max_records)
    return cfg


def sweep_horizon(a: float, k: float, settings: Optional[Dict[str, Any]] = None) -> float:
    """clip(scale / (k a^2), min, max): long enough for the a^2-slow average dynamics."""
    sweep = (settings or {}).get("sweep", DEFAULT_CONFIG["sweep"])
    raw = sweep["horizon_scale"] / (k * a * a)
    return float(min(max(raw, sweep["horizon_min"]), sweep["horizon_max"]))


def _sweep_amplitude(family: Callable[[float], Any], a: float, initial: np.ndarray,
                     horizon: Optional[float], tail_fraction: float, center: Any, k: float,
                     settings: Dict[str, Any]) -> Tuple[List[CellOutcome], float, bool, float]:
    sweep = settings.get("sweep", DEFAULT_CONFIG["sweep"])
    system = family(a)
    x0 = _initial_batch(system, initial)
    gain = _system_gain(system, k)
    H = horizon if horizon is not None else sweep_horizon(a, gain, settings)
    cfg = _integrator_config(system, (0.0, H), settings, rtol=sweep["rtol"], atol=sweep["atol"],
                             max_records=settings.get("integrator", {}).get("max_records"))
    traj = integrate(system, x0, cfg)
    row_center = _system_center(system, center)
    row_bounds = np.atleast_1d(ultimate_bounds(traj, tail_fraction, row_center))
    max_norms = np.atleast_1d(np.max(traj.norms(row_center), axis=0))
    cells = [
        CellOutcome(
            a=a, omega=getattr(system, "base_frequency", None), x0=x0[i].tolist(),
            bound=float(row_bounds[i]), max_norm=float(max_norms[i]),
            diverged=bool(traj.diverged[i]),
        )
        for i in range(x0.shape[0])
    ]
    return cells, float(np.max(row_bounds)), traj.any_diverged, H


def sgpas_sweep(family: Callable[[float], Any], amplitudes: Sequence[float], initial: Any,
                horizon: Optional[float] = None, tail_fraction: Optional[float] = None,
                bounds: Optional[GrowthBounds] = None, center: Any = None, k: float = 1.0,
                settings: Optional[Dict[str, Any]] = None, jobs: int = 1) -> StabilityReport:
    """
    Ultimate bounds of a family of systems along a descending amplitude grid.

    Args:
        family: ``family(a)`` builds the system for amplitude ``a``
        amplitudes: Amplitude grid; sorted descending before use
        initial: Initial states (or parameter vectors, expanded with
            ``initial_state``), shape ``(B, m)``
        horizon: Fixed horizon; defaults to the sweep horizon policy
        bounds: Growth bounds of a quartic cost enabling the gamma(a) comparison
        jobs: Worker processes, one amplitude each; ``family`` must be picklable
            when ``jobs > 1``

    Returns:
        Report with one cell per (a, x0) and the verdict
        "bounds nonincreasing in a and below gamma(a)"
    """
    settings = settings or DEFAULT_CONFIG
    sweep = settings.get("sweep", DEFAULT_CONFIG["sweep"])
    tail_fraction = sweep["tail_fraction"] if tail_fraction is None else tail_fraction
    amplitudes = sorted((float(a) for a in amplitudes), reverse=True)
    if not amplitudes or any(not a > 0.0 for a in amplitudes):
        raise StabilityError("Amplitude grid must be non-empty and positive")
    initial = np.atleast_2d(np.asarray(initial, dtype=float))
    use_gain = bounds is not None and bounds.degree == 4

    report = StabilityReport(
        kind="sweep",
        query={"horizon": horizon, "tail_fraction": tail_fraction,
               "initial": initial.tolist(), "growth_bounds": bounds.to_dict() if bounds else None},
        grid={"a": amplitudes},
    )
    if bounds is not None and not use_gain:
        report.notes.append("gamma(a) comparison skipped: cost growth is not quartic")

    args = (initial, horizon, tail_fraction, center, k, settings)
    if jobs > 1 and len(amplitudes) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_sweep_amplitude, family, a, *args) for a in amplitudes]
            results = [f.result() for f in futures]
    else:
        results = [_sweep_amplitude(family, a, *args) for a in amplitudes]

    maxima = []
    for a, (cells, maximum, diverged, H) in zip(amplitudes, results):
        report.cells.extend(cells)
        maxima.append(maximum)
        if diverged:
            report.notes.append(f"divergence at a={a:g}")
            logger.warning(f"Sweep trajectory diverged at a={a:g}")
        logger.info(f"Sweep a={a:g}: horizon {H:.3g}, max ultimate bound {maximum:.6g}")

    monotone = all(later <= earlier for earlier, later in zip(maxima, maxima[1:]))
    gains = [gamma_gain(a, bounds) for a in amplitudes] if use_gain else None
    within = all(m <= g for m, g in zip(maxima, gains)) if gains else None
    report.details = {"max_bounds": maxima, "gamma": gains, "monotone": monotone,
                      "within_gamma": within}
    report.verdict = monotone and within is not False and not any(c.diverged for c in report.cells)
    return report


@dataclass
class ClosenessReport:
    omegas: List[float]
    gaps: List[float]
    delta: float
    omega_star: Optional[float]
    horizon: float
    samples: int
    diverged: List[bool]

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def trajectory_gap(first: Trajectory, second: Trajectory) -> float:
    """Largest pointwise distance between two trajectories recorded on the same grid."""
    if first.states.shape != second.states.shape:
        raise StabilityError(
            f"Trajectories are not on a common grid: {first.states.shape} vs {second.states.shape}"
        )
    if first.any_diverged or second.any_diverged:
        return math.inf
    return float(np.max(np.linalg.norm(first.states - second.states, axis=-1)))


def _closeness_gap(model_free: EscSystem, x0: np.ndarray, reference: Trajectory, T: float,
                   samples: int, steps_per_cycle: int) -> Tuple[float, bool]:
    h_avg = T / samples
    cfg = IntegratorConfig(t_span=(0.0, T), steps_per_cycle=steps_per_cycle)
    substeps = max(1, math.ceil(h_avg / auto_step(model_free, cfg) - 1e-9))
    cfg.step = h_avg / substeps
    cfg.record_stride = substeps
    traj = integrate(model_free, x0, cfg)
    if traj.any_diverged:
        return math.inf, True
    return trajectory_gap(traj, reference), False


def closeness_experiment(cost: CostFunction, spec: DitherSpec, omegas: Sequence[float], x0: Any,
                         T: float, params: Optional[EscParams] = None, variant: Any = Variant.GESC,
                         samples: int = 1000, delta: float = 0.05,
                         quadrature: Optional[QuadratureConfig] = None,
                         steps_per_cycle: int = 40, jobs: int = 1) -> ClosenessReport:
    """
    Maximum distance between model-free and average trajectories for each frequency.

    Both trajectories are sampled on the grid t_j = j T / samples. The average
    system uses that grid as its RK4 step; the model-free system subdivides it
    until the dither is resolved. With ``jobs > 1`` the frequencies run in
    worker processes.
    """
    omegas = sorted(float(w) for w in omegas)
    if not omegas or any(not w > 0.0 for w in omegas):
        raise StabilityError("Frequency grid must be non-empty and positive")
    if not T > 0.0 or samples < 1:
        raise StabilityError("Closeness needs T > 0 and at least one sample")
    average = EscSystem(variant, Mode.AVERAGE, cost, params, spec, quadrature)
    x0 = np.asarray(x0, dtype=float)
    if x0.shape[-1] != average.state_dim:
        x0 = average.initial_state(x0)

    reference = integrate(average, x0, IntegratorConfig(t_span=(0.0, T), step=T / samples))
    systems = [
        EscSystem(variant, Mode.MODEL_FREE, cost, params, spec.with_values(base_frequency=omega),
                  quadrature)
        for omega in omegas
    ]
    args = (x0, reference, T, samples, steps_per_cycle)
    if jobs > 1 and len(systems) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_closeness_gap, system, *args) for system in systems]
            results = [f.result() for f in futures]
    else:
        results = [_closeness_gap(system, *args) for system in systems]

    gaps = [gap for gap, _ in results]
    diverged = [flag for _, flag in results]
    for omega, gap in zip(omegas, gaps):
        logger.info(f"Closeness at omega={omega:g}: gap {gap:.6g}")

    omega_star = None
    for i, omega in enumerate(omegas):
        if all(g < delta for g in gaps[i:]):
            omega_star = omega
            break
    return ClosenessReport(omegas=omegas, gaps=gaps, delta=delta, omega_star=omega_star,
                           horizon=T, samples=samples, diverged=diverged)


@dataclass
class StabilityQuery:
    """Radii, parameter grids and sampling for a practical-stability certificate."""

    c1: float
    c2: float
    amplitudes: Sequence[float]
    omegas: Sequence[float]
    horizon: Optional[float] = None
    t_grid: Optional[Sequence[float]] = None
    ring_points: int = 16
    interior_points: int = 16
    seed: int = 0
    center: Optional[Sequence[float]] = None
    spot_check_fraction: float = 0.1
    exhaustive: bool = False
    b1: Optional[float] = None
    k: float = 1.0
    horizon_scale: float = 50.0
    horizon_floor: float = 100.0
    model_free_horizon: float = 10.0
    t_grid_points: int = 20

    def __post_init__(self):
        if not self.c2 > 0.0:
            raise StabilityError(f"c2 must be positive, got {self.c2}")
        if not self.c1 > 0.0:
            raise StabilityError(f"c1 must be positive, got {self.c1}")
        if not len(self.amplitudes) or not len(self.omegas):
            raise StabilityError("Amplitude and frequency grids must be non-empty")
        values = list(self.amplitudes) + list(self.omegas)
        if any(not (math.isfinite(v) and v > 0.0) for v in values):
            raise StabilityError("Grid values must be finite and positive")
        self.amplitudes = sorted((float(a) for a in self.amplitudes), reverse=True)
        self.omegas = sorted(float(w) for w in self.omegas)
        if self.horizon is not None and not self.horizon > 0.0:
            raise StabilityError("horizon must be positive")
        if not 0.0 <= self.spot_check_fraction:
            raise StabilityError("spot_check_fraction must be non-negative")
        if not self.model_free_horizon > 0.0:
            raise StabilityError("model_free_horizon must be positive")

    def resolved_horizon(self, phase_dependent: bool = False) -> float:
        """
        Explicit horizon, else max(scale / (k b1 c2^2), floor).

        Model-free systems resolve every dither cycle, so their default is
        capped at ``model_free_horizon``.
        """
        if self.horizon is not None:
            return float(self.horizon)
        if self.b1:
            H = max(self.horizon_scale / (self.k * self.b1 * self.c2 ** 2), self.horizon_floor)
        else:
            H = self.horizon_floor
        return min(H, self.model_free_horizon) if phase_dependent else H

    def resolved_t_grid(self, horizon: float) -> List[float]:
        if self.t_grid is not None:
            return sorted(float(t) for t in self.t_grid)
        return np.linspace(0.0, horizon, self.t_grid_points + 1).tolist()

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def _certify_samples(system: Any, query: StabilityQuery, center: Optional[np.ndarray]) -> np.ndarray:
    """
    Initial states for one cell.

    Systems carrying a gain matrix are sampled in the parameter coordinates
    only; the matrix part starts at its equilibrium value, or the identity.
    """
    state_dim = getattr(system, "state_dim", None)
    if state_dim is None:
        if center is None:
            raise StabilityError("Cannot infer the state dimension: pass a center")
        state_dim = center.size
    n = getattr(system, "n", state_dim)

    def sample(dim: int, c: Optional[np.ndarray]) -> np.ndarray:
        return ring_samples(query.c1, dim, query.ring_points, query.interior_points, query.seed, c)

    if n == state_dim:
        return sample(state_dim, center)
    states = system.initial_state(sample(n, None if center is None else center[:n]))
    if center is not None:
        states[:, n:] = center[n:]
    return states


@dataclass
class CellVerdict:
    a: float
    omega: Optional[float]
    satisfied: bool
    T: Optional[float]
    max_distance: float
    reason: str
    outcomes: List[CellOutcome]


def _evaluate_cell(family: Callable[[float, float], Any], a: float, omega: float,
                   query: StabilityQuery, mode: CertMode,
                   settings: Dict[str, Any]) -> CellVerdict:
    system = family(a, omega)
    phase_dependent = getattr(system, "phase_dependent", False)
    center = _system_center(system, query.center)
    samples = _certify_samples(system, query, center)
    H = query.resolved_horizon(phase_dependent)
    cell_omega = omega if phase_dependent else None

    def numerical_failure(error: Exception) -> CellVerdict:
        logger.warning(f"Certify cell a={a:g}, omega={omega:g} failed numerically: {error}")
        failed = [
            CellOutcome(a=a, omega=cell_omega, x0=x.tolist(), bound=math.inf, max_norm=math.inf,
                        satisfied=False)
            for x in samples
        ]
        return CellVerdict(a, cell_omega, False, None, math.inf,
                           f"numerical failure: {error}", failed)

    cfg = _integrator_config(system, (0.0, H), settings, stop_on_divergence=True)
    cfg.record_stride = int(cfg.max_steps)
    monitor = TrajectoryMonitor(query.c2, center, stop_when_outside=mode is not CertMode.PUA)
    try:
        traj = integrate(system, samples, cfg, monitor)
    except CELL_FAILURES as e:
        return numerical_failure(e)

    def outcomes(satisfied_rows: np.ndarray) -> List[CellOutcome]:
        entered = monitor.first_inside
        return [
            CellOutcome(
                a=a, omega=cell_omega, x0=samples[i].tolist(),
                bound=float(np.linalg.norm(traj.final[i] - (0.0 if center is None else center))),
                max_norm=float(monitor.max_distance[i]),
                entered_at=None if np.isnan(entered[i]) else float(entered[i]),
                diverged=bool(traj.diverged[i]),
                satisfied=bool(satisfied_rows[i]),
            )
            for i in range(samples.shape[0])
        ]

    max_distance = float(np.max(monitor.max_distance))
    if traj.any_diverged:
        ok = ~traj.diverged
        return CellVerdict(a, cell_omega, False, None, math.inf, "diverged", outcomes(ok))

    T_found: Optional[float] = None
    if mode is CertMode.PUA:
        last_outside = monitor.last_outside
        ok_rows = last_outside < H
        required = float(np.max(last_outside))
        candidates = [t for t in query.resolved_t_grid(H) if t > required and t <= H]
        if not np.all(ok_rows) or not candidates:
            return CellVerdict(a, cell_omega, False, None, max_distance,
                               "not inside the c2 ball by the end of the horizon", outcomes(ok_rows))
        T_found = candidates[0]
    else:
        ok_rows = monitor.max_distance < query.c2
        if monitor.tripped or not np.all(ok_rows):
            return CellVerdict(a, cell_omega, False, None, max_distance,
                               "left the c2 ball", outcomes(ok_rows))

    if query.spot_check_fraction > 0.0:
        extra = _integrator_config(system, (H, H * (1.0 + query.spot_check_fraction)), settings,
                                   stop_on_divergence=True)
        extra.record_stride = int(extra.max_steps)
        spot = TrajectoryMonitor(query.c2, center, stop_when_outside=True)
        try:
            follow = integrate(system, traj.final, extra, spot)
        except CELL_FAILURES as e:
            return numerical_failure(e)
        if spot.tripped or follow.any_diverged:
            return CellVerdict(a, cell_omega, False, None, max_distance,
                               "escaped during the forward-invariance spot check",
                               outcomes(np.zeros(samples.shape[0], dtype=bool)))

    return CellVerdict(a, cell_omega, True, T_found, max_distance, "ok", outcomes(ok_rows))


def _run_cells(family, a: float, omegas: List[float], query: StabilityQuery, mode: CertMode,
               settings: Dict[str, Any], jobs: int) -> List[CellVerdict]:
    if jobs > 1 and len(omegas) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_evaluate_cell, family, a, w, query, mode, settings) for w in omegas]
            return [f.result() for f in futures]
    verdicts = []
    for omega in omegas:
        verdict = _evaluate_cell(family, a, omega, query, mode, settings)
        verdicts.append(verdict)
        logger.info(f"Certify cell a={a:g}, omega={omega:g}: {verdict.reason}")
        if verdict.satisfied:
            break
    return verdicts


def certify_practical_stability(family: Callable[[float, float], Any], query: StabilityQuery,
                                mode: Any = CertMode.PUA,
                                settings: Optional[Dict[str, Any]] = None,
                                jobs: int = 1) -> StabilityReport:
    """
    Search the (a, w) grid for a practical-stability certificate.

    Amplitudes are visited in descending order and, for each, frequencies in
    ascending order; the first passing frequency is w*(a). By default the
    search stops at the first amplitude with a passing cell; with
    ``query.exhaustive`` every amplitude is visited and a* is the largest
    amplitude below which every grid amplitude passed.

    Args:
        family: ``family(a, w)`` builds a system; phase-free systems ignore ``w``
        query: Radii, grids and sampling
        mode: ``PS``, ``PB`` or ``delta-PUA``
        jobs: Worker processes for the frequency cells of one amplitude;
            ``family`` must be picklable when ``jobs > 1``

    Returns:
        Report with thresholds ``a_star``, ``omega_star``, ``T`` (or the worst
        counterexample when nothing passed)
    """
    mode = CertMode(mode)
    settings = settings or DEFAULT_CONFIG
    first = family(query.amplitudes[0], query.omegas[0])
    phase_dependent = bool(getattr(first, "phase_dependent", False))
    omegas = list(query.omegas) if phase_dependent else list(query.omegas[:1])
    report = StabilityReport(
        kind="certify",
        query={**query.to_dict(), "mode": mode.value,
               "horizon": query.resolved_horizon(phase_dependent)},
        grid={"a": list(query.amplitudes), "omega": list(query.omegas)},
    )
    if mode is not CertMode.PUA and query.c1 >= query.c2:
        report.notes.append(f"{mode.value} cannot hold with c1 >= c2: initial states already violate it")
    report.notes.append("evidence on a finite sample of initial conditions and a finite horizon")

    passing: Dict[float, CellVerdict] = {}
    failures: List[CellVerdict] = []
    for a in query.amplitudes:
        verdicts = _run_cells(family, a, omegas, query, mode, settings, jobs)
        for verdict in verdicts:
            report.cells.extend(verdict.outcomes)
        passed = [v for v in verdicts if v.satisfied]
        failures.extend(v for v in verdicts if not v.satisfied)
        if passed:
            passing[a] = passed[0]
            if not query.exhaustive:
                break

    if query.exhaustive:
        certified: List[CellVerdict] = []
        for a in sorted(query.amplitudes):
            if a not in passing:
                break
            certified.append(passing[a])
    else:
        certified = list(passing.values())[:1]

    if certified:
        top = max(certified, key=lambda v: v.a)
        omegas_used = [v.omega for v in certified if v.omega is not None]
        times = [v.T for v in certified if v.T is not None]
        report.thresholds = {
            "a_star": top.a,
            "omega_star": max(omegas_used) if omegas_used else None,
            "T": max(times) if times else None,
        }
        report.verdict = True
        logger.info(f"Certificate found: {report.thresholds}")
    else:
        worst = max(failures, key=lambda v: v.max_distance)
        report.thresholds = {"a_star": None, "omega_star": None, "T": None}
        report.details["counterexample"] = {
            "a": worst.a, "omega": worst.omega, "reason": worst.reason,
            "max_distance": worst.max_distance,
        }
    report.details["cells"] = [
        {"a": v.a, "omega": v.omega, "satisfied": v.satisfied, "T": v.T, "reason": v.reason}
        for v in list(passing.values()) + failures
    ]
    return report
