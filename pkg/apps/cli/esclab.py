"""esclab command line: simulate, average, linearise and certify extremum seeking flows."""

import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

import click

# Ensure parent of 'packages' is in sys.path so 'packages.core' works
CURRENT_DIR = Path(__file__).resolve().parent
PROJECT_ROOT = CURRENT_DIR.parent.parent
if str(PROJECT_ROOT) not in sys.path:
    sys.path.insert(0, str(PROJECT_ROOT))

from packages.core.artifacts import dumps_json  # noqa: E402
from packages.core.config import configure_logging, deep_merge, load_config, read_config_file  # noqa: E402
from packages.core.engine import ExperimentEngine  # noqa: E402
from packages.core.errors import ConfigError, EscLabError  # noqa: E402
from packages.core.registry import get_registry  # noqa: E402

logger = logging.getLogger(__name__)


def parse_floats(text: Optional[str]) -> Optional[List[float]]:
    """``"1,2.5"`` -> ``[1.0, 2.5]``."""
    if text is None:
        return None
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"Expected a comma separated list of numbers, got {text!r}")


def parse_ints(text: Optional[str]) -> Optional[List[int]]:
    if text is None:
        return None
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"Expected a comma separated list of integers, got {text!r}")


def parse_points(text: Optional[str]) -> Optional[List[List[float]]]:
    """``"1,1;2,0"`` -> ``[[1, 1], [2, 0]]``; every point must have the same length."""
    if text is None:
        return None
    points = [parse_floats(chunk) for chunk in text.split(";") if chunk.strip()]
    if len({len(p) for p in points}) > 1:
        raise ConfigError(f"Points in {text!r} have different lengths")
    return points


def parse_json(text: Optional[str], what: str) -> Any:
    if text is None:
        return None
    try:
        return json.loads(text)
    except ValueError as e:
        raise ConfigError(f"{what} is not valid JSON: {e}")


def system_options(func):
    """Flags describing the cost, dither, algorithm and gains; they override ``--config``."""
    options = [
        click.option("--cost", type=str, help="Cost id (quartic2d, quadratic, sphere)."),
        click.option("--Q", "Q", type=str, help="JSON matrix for the quadratic cost."),
        click.option("--dim", type=int, help="Dimension for the sphere cost."),
        click.option("--algo", type=str, help="Algorithm, e.g. gesc, gesc-average, nesc-log."),
        click.option("--rates", type=str, help="Integer relative rates, e.g. 1,3."),
        click.option("--ramp", type=str, help="Unnormalised relative amplitudes, e.g. 12,1."),
        click.option("--a", "a", type=float, help="Dither amplitude."),
        click.option("--omega", type=float, help="Base dither frequency."),
        click.option("--k", "k", type=float, help="Adaptation gain."),
        click.option("--omega-l", "omega_l", type=float, help="Riccati filter rate."),
        click.option("--order", type=click.Choice(["first", "second"]), help="Rate admissibility order."),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def _system_from_flags(base: Dict[str, Any], flags: Dict[str, Any]) -> Dict[str, Any]:
    override: Dict[str, Any] = {}
    if flags.get("algo"):
        override["algo"] = flags["algo"]
    cost = {k: v for k, v in (("id", flags.get("cost")), ("Q", parse_json(flags.get("Q"), "--Q")),
                              ("dim", flags.get("dim"))) if v is not None}
    if cost:
        override["cost"] = cost
    dither = {k: v for k, v in (("rates", parse_ints(flags.get("rates"))),
                                ("ramp", parse_floats(flags.get("ramp"))),
                                ("a", flags.get("a")), ("omega", flags.get("omega")),
                                ("order", flags.get("order"))) if v is not None}
    if dither:
        override["dither"] = dither
    gains = {k: v for k, v in (("k", flags.get("k")), ("omega_l", flags.get("omega_l"))) if v is not None}
    if gains:
        override["gains"] = gains
    base = dict(base)
    if isinstance(base.get("cost"), str):
        base["cost"] = {"id": base["cost"]}
    if "id" in cost and base.get("cost", {}).get("id") not in (None, cost["id"]):
        base.pop("cost")
    return deep_merge(base, override)


def _run_step(ctx: click.Context, action: str, inputs: Dict[str, Any], output: Optional[str],
              flags: Optional[Dict[str, Any]] = None) -> ExperimentEngine:
    """Run a single-step experiment built from the flags."""
    obj = ctx.obj
    system = _system_from_flags(obj["file_config"].get("system", {}), flags or {})
    step: Dict[str, Any] = {"id": action, "action": action,
                            "inputs": {k: v for k, v in inputs.items() if v is not None}}
    if output:
        step["output"] = str(Path(output).resolve())
    config: Dict[str, Any] = {"id": f"cli-{action}", "steps": [step]}
    if system:
        config["system"] = system

    engine = ExperimentEngine(settings=obj["settings"])
    engine.execute(config)
    return engine


def _echo_result(engine: ExperimentEngine, action: str) -> None:
    click.echo(dumps_json(engine.step_results[action]), nl=False)


@click.group()
@click.option("--config", "-c", "config_path", type=click.Path(exists=True, dir_okay=False),
              help="YAML/JSON file with 'settings', 'seed' and a default 'system'.")
@click.option("--seed", type=int, help="Seed for sampled initial conditions (falls back to ESC_LAB_SEED).")
@click.option("--jobs", "-j", type=int, default=1, show_default=True, help="Worker processes for sweep-a, closeness and certify.")
@click.option("--verbose", "-v", is_flag=True, help="Debug logging.")
@click.pass_context
def cli(ctx, config_path, seed, jobs, verbose):
    """esclab: extremum seeking control simulation and stability evidence."""
    configure_logging(verbose)
    overrides = {"seed": seed} if seed is not None else {}
    ctx.ensure_object(dict)
    ctx.obj["overrides"] = overrides
    ctx.obj["settings"] = load_config(config_path, overrides)
    ctx.obj["file_config"] = read_config_file(config_path) if config_path else {}
    ctx.obj["jobs"] = jobs


@cli.command("validate-dither")
@click.option("--rates", type=str, required=True, help="Integer relative rates, e.g. 1,3.")
@click.option("--order", type=click.Choice(["first", "second"]), default="first", show_default=True)
@click.pass_context
def validate_dither_command(ctx, rates, order):
    """Check rates against the first- or second-order admissibility rules."""
    engine = _run_step(ctx, "validate_dither", {"rates": parse_ints(rates), "order": order}, None)
    _echo_result(engine, "validate_dither")


@cli.command("simulate")
@system_options
@click.option("--x0", required=True, help="Initial parameter or full state, e.g. 1,1.")
@click.option("--T", "T", type=float, required=True, help="Horizon length.")
@click.option("--t0", type=float, default=0.0, show_default=True)
@click.option("--step", type=float, help="Fixed step (default: resolve the fastest dither channel).")
@click.option("--method", type=click.Choice(["rk4", "rk4-doubling"]))
@click.option("--record-stride", type=int)
@click.option("--output", "-o", type=click.Path(dir_okay=False),
              help="Trajectory CSV path; without it the CSV goes to standard output.")
@click.pass_context
def simulate_command(ctx, x0, T, t0, step, method, record_stride, output, **flags):
    """Integrate one algorithm and write the trajectory as CSV."""
    inputs = {"x0": parse_floats(x0), "T": T, "t0": t0, "step": step, "method": method,
              "record_stride": record_stride}
    engine = _run_step(ctx, "simulate", inputs, output, flags)
    if output:
        _echo_result(engine, "simulate")
    else:
        click.echo(engine.artifacts["simulate"], nl=False)


@cli.command("average")
@system_options
@click.option("--at", required=True, help="Point at which to evaluate the averaged field.")
@click.pass_context
def average_command(ctx, at, **flags):
    """Evaluate the period-averaged field and its residual against the exact flow."""
    _echo_result(_run_step(ctx, "average", {"at": parse_floats(at)}, None, flags), "average")


@cli.command("linearize")
@system_options
@click.option("--at", help="Linearisation point (default: the equilibrium).")
@click.option("--h", "h", type=float, help="Central-difference step.")
@click.option("--output", "-o", type=click.Path(dir_okay=False))
@click.pass_context
def linearize_command(ctx, at, h, output, **flags):
    """Central-difference Jacobian and its spectrum."""
    engine = _run_step(ctx, "linearize", {"at": parse_floats(at), "h": h}, output, flags)
    _echo_result(engine, "linearize")


@cli.command("spectrum")
@system_options
@click.option("--matrix", help="JSON matrix; without it the linearised system is used.")
@click.option("--at", help="Linearisation point (default: the equilibrium).")
@click.option("--h", "h", type=float)
@click.pass_context
def spectrum_command(ctx, matrix, at, h, **flags):
    """Eigenvalues sorted by real part, then imaginary part."""
    inputs = {"matrix": parse_json(matrix, "--matrix"), "at": parse_floats(at), "h": h}
    _echo_result(_run_step(ctx, "spectrum", inputs, None, flags), "spectrum")


@cli.command("sweep-a")
@system_options
@click.option("--amplitudes", required=True, help="Amplitude grid, e.g. 100,1,0.01.")
@click.option("--x0", help="Initial conditions, e.g. '2,0;0,2' (default: a ring).")
@click.option("--radius", type=float, help="Radius of the default ring of initial conditions.")
@click.option("--horizon", type=float)
@click.option("--tail-fraction", type=float)
@click.option("--output", "-o", type=click.Path(dir_okay=False))
@click.pass_context
def sweep_command(ctx, amplitudes, x0, radius, horizon, tail_fraction, output, **flags):
    """Ultimate bounds across a descending amplitude grid."""
    inputs = {"amplitudes": parse_floats(amplitudes), "x0": parse_points(x0), "radius": radius,
              "horizon": horizon, "tail_fraction": tail_fraction, "jobs": ctx.obj["jobs"]}
    _echo_result(_run_step(ctx, "sweep", inputs, output, flags), "sweep")


@cli.command("closeness")
@system_options
@click.option("--omegas", required=True, help="Frequency grid, e.g. 100,10000.")
@click.option("--x0", required=True)
@click.option("--T", "T", type=float, required=True)
@click.option("--samples", type=int)
@click.option("--delta", type=float)
@click.option("--output", "-o", type=click.Path(dir_okay=False))
@click.pass_context
def closeness_command(ctx, omegas, x0, T, samples, delta, output, **flags):
    """Maximum gap between model-free and average trajectories per frequency."""
    inputs = {"omegas": parse_floats(omegas), "x0": parse_floats(x0), "T": T,
              "samples": samples, "delta": delta, "jobs": ctx.obj["jobs"]}
    _echo_result(_run_step(ctx, "closeness", inputs, output, flags), "closeness")


@cli.command("certify")
@system_options
@click.option("--c1", type=float, required=True, help="Radius of the initial-condition ball.")
@click.option("--c2", type=float, required=True, help="Radius of the target ball.")
@click.option("--amplitudes", required=True)
@click.option("--omegas", required=True)
@click.option("--mode", type=click.Choice(["PS", "PB", "delta-PUA"]), default="delta-PUA", show_default=True)
@click.option("--horizon", type=float)
@click.option("--t-grid", help="Candidate convergence times, e.g. 1,2,5,10.")
@click.option("--exhaustive", is_flag=True, help="Visit every amplitude instead of stopping at the first pass.")
@click.option("--output", "-o", type=click.Path(dir_okay=False))
@click.pass_context
def certify_command(ctx, c1, c2, amplitudes, omegas, mode, horizon, t_grid, exhaustive, output, **flags):
    """Search the (a, omega) grid for a practical-stability certificate."""
    inputs = {
        "c1": c1, "c2": c2, "amplitudes": parse_floats(amplitudes), "omegas": parse_floats(omegas),
        "mode": mode, "horizon": horizon, "t_grid": parse_floats(t_grid), "exhaustive": exhaustive,
        "jobs": ctx.obj["jobs"],
    }
    _echo_result(_run_step(ctx, "certify", inputs, output, flags), "certify")


@cli.command("plot")
@system_options
@click.option("--style", type=click.Choice(["stream", "trajectory"]), default="stream", show_default=True)
@click.option("--x0", help="Initial conditions for trajectory plots, e.g. '1,1;-1,1'.")
@click.option("--T", "T", type=float)
@click.option("--output", "-o", type=click.Path(dir_okay=False), required=True, help="SVG path.")
@click.pass_context
def plot_command(ctx, style, x0, T, output, **flags):
    """Write an SVG phase portrait."""
    inputs = {"style": style, "x0": parse_points(x0), "T": T}
    _echo_result(_run_step(ctx, "plot", inputs, output, flags), "plot")


@cli.command("growth-bounds")
@system_options
@click.pass_context
def growth_bounds_command(ctx, **flags):
    """Growth constants b1, b2 of a homogeneous cost."""
    if not flags.get("algo") and "algo" not in ctx.obj["file_config"].get("system", {}):
        flags["algo"] = "gesc-model-based"
    _echo_result(_run_step(ctx, "growth_bounds", {}, None, flags), "growth_bounds")


@cli.command("list-algorithms")
def list_algorithms_command():
    """List the registered costs and algorithms."""
    click.echo(dumps_json(get_registry().to_json()), nl=False)


@cli.command("run")
@click.argument("experiment", type=click.Path(exists=True, dir_okay=False, resolve_path=True))
@click.pass_context
def run_command(ctx, experiment):
    """Run every step of an experiment file."""
    settings = load_config(experiment, ctx.obj["overrides"])
    engine = ExperimentEngine(settings=settings)
    results = engine.execute(engine.load(experiment))
    click.echo(dumps_json(results), nl=False)


def _error_json(code: str, message: str) -> str:
    return dumps_json({"error": code, "message": message, "details": {}})


def main(argv: Optional[List[str]] = None) -> int:
    """
    Run the CLI and map failures to exit codes.

    Returns:
        0 on success, 1 for validation and config errors, 2 for runtime failures
    """
    try:
        result = cli.main(args=argv, prog_name="esclab", standalone_mode=False)
        return result if isinstance(result, int) else 0
    except EscLabError as e:
        logger.error(f"{e.code}: {e.message}")
        click.echo(dumps_json(e.to_dict()), err=True, nl=False)
        return e.exit_code
    except click.exceptions.Abort:
        logger.error("Aborted")
        click.echo(_error_json("aborted", "Aborted"), err=True, nl=False)
        return 1
    except click.ClickException as e:
        logger.error(f"Usage error: {e.format_message()}")
        click.echo(_error_json("usage_error", e.format_message()), err=True, nl=False)
        return 1
    except OSError as e:
        logger.error(f"I/O error: {e}")
        click.echo(_error_json("io_error", str(e)), err=True, nl=False)
        return 2
    except Exception as e:
        logger.exception(f"Unexpected failure: {e}")
        click.echo(_error_json("internal_error", str(e)), err=True, nl=False)
        return 2
