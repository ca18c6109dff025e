"""Experiment execution engine for esclab."""

import copy
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Union

import numpy as np

from packages.core.artifacts import atomic_write_text, dumps_json, to_jsonable, trajectory_csv
from packages.core.config import DEFAULT_CONFIG, deep_merge, read_config_file
from packages.core.errors import ConfigError, CostError, DitherError, DivergenceError, StabilityError
from packages.core.registry import Registry, SystemSpec, get_registry
from packages.esc import stability
from packages.esc.averaging import QuadratureConfig
from packages.esc.costs import growth_bounds
from packages.esc.dither import validate_rates
from packages.esc.dynamics import EscSystem, Mode, Variant
from packages.esc.integrator import IntegratorConfig, capped_record_stride, integrate
from packages.esc.plotting import PlotSettings, PlotStyle, emit_plot
from packages.sdk.schema import validate_experiment

logger = logging.getLogger(__name__)

# A whole-string reference keeps the referenced value's type; embedded ones are formatted.
TEMPLATE_PATTERN = re.compile(r"\{\{\s*([A-Za-z_][A-Za-z0-9_-]*)((?:\.[A-Za-z0-9_]+)+)\s*\}\}")

SYSTEM_FREE_ACTIONS = {"validate_dither", "spectrum"}


@dataclass
class StepContext:
    step_id: str
    action: str
    spec: Optional[SystemSpec]
    inputs: Dict[str, Any]
    settings: Dict[str, Any]
    output: Optional[Path] = None


@dataclass
class ActionResult:
    data: Dict[str, Any]
    text: Optional[str] = None
    written: bool = False


def _require(ctx: StepContext, *names: str) -> None:
    missing = [n for n in names if ctx.inputs.get(n) is None]
    if missing:
        raise ConfigError(f"Step '{ctx.step_id}' ({ctx.action}) is missing inputs: {missing}")


def _system(ctx: StepContext) -> EscSystem:
    if ctx.spec is None:
        raise ConfigError(f"Step '{ctx.step_id}' ({ctx.action}) needs a system")
    return ctx.spec.build()


def _array(value: Any, what: str) -> np.ndarray:
    try:
        return np.asarray(value, dtype=float)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{what} must be a rectangular array of numbers: {e}")


def _state(system: EscSystem, value: Any, gamma: Any = None) -> np.ndarray:
    """Expand a parameter vector (or a stack of them) into full states."""
    x = _array(value, "Initial state")
    if x.shape[-1] == system.state_dim and gamma is None:
        return x
    return system.initial_state(x, gamma)


def _phase_free(system: EscSystem, what: str) -> EscSystem:
    if system.phase_dependent:
        raise StabilityError(f"{what} needs an average or model-based algorithm, got {system.name}")
    return system


def action_validate_dither(ctx: StepContext) -> ActionResult:
    rates = ctx.inputs.get("rates") or (ctx.spec.rates if ctx.spec else None)
    order = ctx.inputs.get("order") or (ctx.spec.order if ctx.spec else "first")
    if not rates:
        raise ConfigError(f"Step '{ctx.step_id}' needs rates")
    report = validate_rates(rates, order)
    if not report.valid:
        raise DitherError(f"Rates {list(rates)} are not {report.order.value}-order admissible",
                          report.to_dict())
    return ActionResult(report.to_dict())


def action_growth_bounds(ctx: StepContext) -> ActionResult:
    if ctx.spec is None:
        raise ConfigError(f"Step '{ctx.step_id}' needs a system")
    bounds = growth_bounds(ctx.spec.build_cost())
    data = bounds.to_dict()
    if bounds.degree == 4:
        data["gamma_per_unit_a"] = stability.gamma_gain(1.0, bounds)
    return ActionResult(data)


def action_simulate(ctx: StepContext) -> ActionResult:
    _require(ctx, "x0", "T")
    system = _system(ctx)
    x0 = _state(system, ctx.inputs["x0"], ctx.inputs.get("Gamma0"))
    t0 = float(ctx.inputs.get("t0", 0.0))
    cfg = IntegratorConfig.from_settings(
        (t0, t0 + float(ctx.inputs["T"])), ctx.settings["integrator"],
        step=ctx.inputs.get("step"), method=ctx.inputs.get("method"),
        record_stride=ctx.inputs.get("record_stride"),
        steps_per_cycle=ctx.inputs.get("steps_per_cycle"),
    )
    if "record_stride" not in ctx.inputs:
        cfg.record_stride = capped_record_stride(system, cfg, ctx.settings["integrator"]["max_records"])
    traj = integrate(system, x0, cfg)
    if traj.any_diverged and ctx.inputs.get("fatal_divergence", True):
        t_div = float(np.nanmin(traj.divergence_time))
        raise DivergenceError(f"Trajectory left the divergence cutoff at t={t_div:.6g}", time=t_div)
    theta, _ = system.split(traj.final)
    data = {
        "algorithm": system.name,
        "t_end": float(traj.times[-1]),
        "samples": int(traj.times.size),
        "final": traj.final,
        "theta_norm": np.linalg.norm(theta, axis=-1),
        "diverged": traj.diverged,
        "steps": traj.meta.get("steps"),
    }
    return ActionResult(data, text=trajectory_csv(traj.times, traj.states))


def action_average(ctx: StepContext) -> ActionResult:
    _require(ctx, "at")
    system = _system(ctx)
    average = EscSystem(system.variant, Mode.AVERAGE, system.cost, system.params,
                        system.dither, system.quadrature)
    x = _state(average, ctx.inputs["at"], ctx.inputs.get("Gamma"))
    data: Dict[str, Any] = {"at": x, "average": average.rhs(0.0, x)}
    if system.cost.grad_oracle is not None and (
            system.variant is Variant.GESC or system.cost.hess_oracle is not None):
        model_based = EscSystem(system.variant, Mode.MODEL_BASED, system.cost, system.params)
        data["model_based"] = model_based.rhs(0.0, x)
        data["residual"] = data["average"] - data["model_based"]
    return ActionResult(data)


def _linearization(ctx: StepContext) -> Dict[str, Any]:
    system = _phase_free(_system(ctx), "Linearisation")
    at = ctx.inputs.get("at")
    if at is None:
        at = system.equilibrium()
        if at is None:
            at = np.zeros(system.state_dim)
    x_star = _state(system, at)
    h = float(ctx.inputs.get("h", ctx.settings["linearize"]["step"]))
    jacobian = stability.linearize(lambda x: system.rhs(0.0, x), x_star, h)
    eigenvalues = stability.spectrum(jacobian)
    return {
        "algorithm": system.name,
        "at": x_star,
        "h": h,
        "jacobian": jacobian,
        "eigenvalues": eigenvalues,
        "unstable": bool(np.any(eigenvalues.real > 0.0)),
    }


def action_linearize(ctx: StepContext) -> ActionResult:
    return ActionResult(_linearization(ctx))


def action_spectrum(ctx: StepContext) -> ActionResult:
    if ctx.inputs.get("matrix") is not None:
        eigenvalues = stability.spectrum(_array(ctx.inputs["matrix"], "matrix"))
        return ActionResult({"eigenvalues": eigenvalues,
                             "unstable": bool(np.any(eigenvalues.real > 0.0))})
    return ActionResult(_linearization(ctx))


def _quartic_bounds(ctx: StepContext):
    cost = ctx.spec.build_cost()
    return growth_bounds(cost) if cost.degree == 4 else None


def action_sweep(ctx: StepContext) -> ActionResult:
    _require(ctx, "amplitudes")
    system = _system(ctx)
    sweep = ctx.settings["sweep"]
    x0 = ctx.inputs.get("x0")
    if x0 is None:
        x0 = stability.ring_samples(float(ctx.inputs.get("radius", sweep["radius"])), system.n,
                                    int(sweep["ring_points"]), 0, ctx.settings["seed"])
    report = stability.sgpas_sweep(
        ctx.spec.family(), ctx.inputs["amplitudes"], _array(x0, "x0"),
        horizon=ctx.inputs.get("horizon"), tail_fraction=ctx.inputs.get("tail_fraction"),
        bounds=_quartic_bounds(ctx), k=ctx.spec.k, settings=ctx.settings,
        jobs=int(ctx.inputs.get("jobs", 1)),
    )
    return ActionResult(report.to_dict())


def action_closeness(ctx: StepContext) -> ActionResult:
    _require(ctx, "omegas", "x0", "T")
    system = _system(ctx)
    defaults = ctx.settings["closeness"]
    report = stability.closeness_experiment(
        system.cost, system.dither, ctx.inputs["omegas"], _array(ctx.inputs["x0"], "x0"),
        float(ctx.inputs["T"]), params=system.params, variant=system.variant,
        samples=int(ctx.inputs.get("samples", defaults["samples"])),
        delta=float(ctx.inputs.get("delta", defaults["delta"])),
        quadrature=system.quadrature,
        steps_per_cycle=int(ctx.settings["integrator"]["steps_per_cycle"]),
        jobs=int(ctx.inputs.get("jobs", 1)),
    )
    return ActionResult(report.to_dict())


def action_certify(ctx: StepContext) -> ActionResult:
    _require(ctx, "c1", "c2", "amplitudes", "omegas")
    _system(ctx)
    certify = ctx.settings["certify"]
    try:
        b1 = growth_bounds(ctx.spec.build_cost()).b1
    except CostError:
        b1 = None
    inputs = ctx.inputs
    query = stability.StabilityQuery(
        c1=float(inputs["c1"]),
        c2=float(inputs["c2"]),
        amplitudes=inputs["amplitudes"],
        omegas=inputs["omegas"],
        horizon=inputs.get("horizon"),
        t_grid=inputs.get("t_grid"),
        ring_points=int(inputs.get("ring_points", certify["ring_points"])),
        interior_points=int(inputs.get("interior_points", certify["interior_points"])),
        seed=int(ctx.settings["seed"]),
        center=None if inputs.get("center") is None else _array(inputs["center"], "center"),
        spot_check_fraction=float(inputs.get("spot_check_fraction", certify["spot_check_fraction"])),
        exhaustive=bool(inputs.get("exhaustive", False)),
        b1=b1,
        k=ctx.spec.k,
        horizon_scale=float(certify["horizon_scale"]),
        horizon_floor=float(certify["horizon_floor"]),
        model_free_horizon=float(certify["model_free_horizon"]),
        t_grid_points=int(certify["t_grid_points"]),
    )
    report = stability.certify_practical_stability(
        ctx.spec.family(), query, inputs.get("mode", stability.CertMode.PUA.value),
        settings=ctx.settings, jobs=int(inputs.get("jobs", 1)),
    )
    return ActionResult(report.to_dict())


def action_plot(ctx: StepContext) -> ActionResult:
    if ctx.output is None:
        raise ConfigError(f"Plot step '{ctx.step_id}' needs an output path")
    system = _system(ctx)
    style = PlotStyle(ctx.inputs.get("style", PlotStyle.STREAM.value))
    settings = PlotSettings.from_settings({**ctx.settings["plot"], **ctx.inputs.get("plot", {})})
    title = ctx.inputs.get("title", system.name)
    if style is PlotStyle.STREAM:
        _phase_free(system, "A stream plot")
        emit_plot(ctx.output, style, field=lambda x: system.rhs(0.0, x), dim=system.state_dim,
                  settings=settings, title=title)
    else:
        _require(ctx, "x0", "T")
        x0 = _state(system, ctx.inputs["x0"])
        cfg = IntegratorConfig.from_settings((0.0, float(ctx.inputs["T"])), ctx.settings["integrator"])
        cfg.record_stride = capped_record_stride(system, cfg, ctx.settings["integrator"]["max_records"])
        emit_plot(ctx.output, style, trajectory=integrate(system, x0, cfg), settings=settings,
                  title=title)
    return ActionResult({"path": str(ctx.output), "style": style.value}, written=True)


ACTIONS: Dict[str, Callable[[StepContext], ActionResult]] = {
    "validate_dither": action_validate_dither,
    "growth_bounds": action_growth_bounds,
    "simulate": action_simulate,
    "average": action_average,
    "linearize": action_linearize,
    "spectrum": action_spectrum,
    "sweep": action_sweep,
    "closeness": action_closeness,
    "certify": action_certify,
    "plot": action_plot,
}


class ExperimentEngine:
    """Execute experiment configs by stepping through their steps in order."""

    def __init__(self, registry: Optional[Registry] = None, settings: Optional[Dict[str, Any]] = None,
                 base_path: Union[str, Path, None] = None):
        self.registry = registry or get_registry()
        self.settings = copy.deepcopy(settings) if settings is not None else None
        self.base_path = Path(base_path) if base_path is not None else Path.cwd()
        self.step_results: Dict[str, Any] = {}
        self.artifacts: Dict[str, str] = {}
        self.executed_step_count: int = 0

    def load(self, path: Union[str, Path]) -> Dict[str, Any]:
        """Read an experiment file; relative outputs resolve next to it."""
        config = read_config_file(str(path))
        self.base_path = Path(path).resolve().parent
        return config

    def _settings_for(self, config: Dict[str, Any]) -> Dict[str, Any]:
        if self.settings is not None:
            return self.settings
        settings = deep_merge(DEFAULT_CONFIG, config.get("settings", {}))
        if "seed" in config:
            settings["seed"] = config["seed"]
        return settings

    def prepare(self, config: Dict[str, Any]) -> List[StepContext]:
        """
        Validate a config completely before anything runs.

        Schema errors, unknown algorithms, dimension mismatches, inadmissible
        dithers and dangling step references all raise here, so a rejected
        config writes no files.
        """
        validate_experiment(config)
        settings = self._settings_for(config)
        quadrature = QuadratureConfig.from_settings(settings["quadrature"])
        base_system = config.get("system") or {}
        contexts: List[StepContext] = []
        seen: List[str] = []
        for step in config["steps"]:
            step_id = step["id"]
            if step_id in seen:
                raise ConfigError(f"Duplicate step id '{step_id}'")
            system = deep_merge(base_system, step.get("system", {}))
            spec = None
            if system:
                spec = SystemSpec.from_config(system, quadrature)
                self.registry.get_algorithm(spec.algo)
                spec.build()
            elif step["action"] not in SYSTEM_FREE_ACTIONS:
                raise ConfigError(f"Step '{step_id}' ({step['action']}) needs a system")
            inputs = step.get("inputs", {})
            self._check_references(step_id, inputs, seen)
            output = self.base_path / step["output"] if step.get("output") else None
            contexts.append(StepContext(step_id, step["action"], spec, inputs, settings, output))
            seen.append(step_id)
        return contexts

    def _check_references(self, step_id: str, value: Any, known: List[str]) -> None:
        if isinstance(value, str):
            for match in TEMPLATE_PATTERN.finditer(value):
                if match.group(1) not in known:
                    raise ConfigError(f"Step '{step_id}' references unknown step '{match.group(1)}'")
        elif isinstance(value, dict):
            for v in value.values():
                self._check_references(step_id, v, known)
        elif isinstance(value, list):
            for v in value:
                self._check_references(step_id, v, known)

    def _lookup(self, source: str, path: str) -> Any:
        value: Any = self.step_results.get(source)
        for key in path.strip(".").split("."):
            if isinstance(value, dict) and key in value:
                value = value[key]
            elif isinstance(value, list) and key.isdigit() and int(key) < len(value):
                value = value[int(key)]
            else:
                raise ConfigError(f"Cannot resolve '{{{{{source}{path}}}}}'")
        return value

    def _resolve(self, value: Any) -> Any:
        if isinstance(value, str):
            whole = TEMPLATE_PATTERN.fullmatch(value.strip())
            if whole:
                return copy.deepcopy(self._lookup(whole.group(1), whole.group(2)))
            return TEMPLATE_PATTERN.sub(lambda m: str(self._lookup(m.group(1), m.group(2))), value)
        if isinstance(value, dict):
            return {k: self._resolve(v) for k, v in value.items()}
        if isinstance(value, list):
            return [self._resolve(v) for v in value]
        return value

    def execute(self, config: Dict[str, Any]) -> Dict[str, Any]:
        """
        Run every step of ``config``.

        Args:
            config: Experiment mapping (see ``experiment.schema.json``)

        Returns:
            Mapping of step id to the step's JSON-ready result
        """
        contexts = self.prepare(config)
        self.step_results = {}
        self.artifacts = {}
        logger.info(f"Executing experiment: {config.get('id', 'unnamed')} ({len(contexts)} steps)")
        for ctx in contexts:
            ctx.inputs = self._resolve(ctx.inputs)
            self.executed_step_count += 1
            logger.info(f"Step {self.executed_step_count}: {ctx.step_id} ({ctx.action})")
            result = ACTIONS[ctx.action](ctx)
            data = to_jsonable(result.data)
            if result.text is not None:
                self.artifacts[ctx.step_id] = result.text
            if ctx.output is not None and not result.written:
                atomic_write_text(ctx.output, result.text if result.text is not None else dumps_json(data))
            self.step_results[ctx.step_id] = data
        return self.step_results
