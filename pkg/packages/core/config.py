"""Configuration layer for esclab."""

import copy
import json
import logging
import os
from typing import Any, Dict, Mapping, Optional

import yaml
from dotenv import load_dotenv

from packages.core.errors import ConfigError

logger = logging.getLogger(__name__)

ENV_PREFIX = "ESC_LAB_"

DEFAULT_CONFIG: Dict[str, Any] = {
    "seed": 0,
    "quadrature": {
        "points_per_period": 64,
        "tol": 1e-10,
        "max_doublings": 12,
    },
    "integrator": {
        "method": "rk4",
        "steps_per_cycle": 40,
        "divergence_cutoff": 1e12,
        "rtol": 1e-8,
        "atol": 1e-10,
        "max_steps": 20_000_000,
        "record_stride": 1,
        "max_records": 20_000,
    },
    "linearize": {
        "step": 1e-4,
    },
    "sweep": {
        "tail_fraction": 0.2,
        "horizon_scale": 50.0,
        "horizon_min": 0.05,
        "horizon_max": 400.0,
        "ring_points": 4,
        "radius": 2.0,
        "rtol": 1e-6,
        "atol": 1e-9,
    },
    "certify": {
        "ring_points": 16,
        "interior_points": 16,
        "horizon_scale": 50.0,
        "horizon_floor": 100.0,
        "model_free_horizon": 10.0,
        "spot_check_fraction": 0.1,
        "t_grid_points": 20,
    },
    "closeness": {
        "samples": 1000,
        "delta": 0.05,
    },
    "plot": {
        "grid": 9,
        "viewport": 2.0,
        "stream_length": 4.0,
        "stream_steps": 400,
        "width": 6.0,
        "height": 6.0,
    },
}


def deep_merge(base: Dict[str, Any], override: Mapping[str, Any]) -> Dict[str, Any]:
    """Recursively merge ``override`` into a copy of ``base``."""
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, Mapping) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def read_config_file(path: str) -> Dict[str, Any]:
    """
    Read a YAML or JSON mapping from disk.

    Args:
        path: Path to a ``.yaml``, ``.yml`` or ``.json`` file

    Returns:
        The parsed mapping
    """
    if not os.path.exists(path):
        raise ConfigError(f"Config file not found: {path}", {"path": path})
    try:
        with open(path) as f:
            if path.endswith(".json"):
                data = json.load(f)
            else:
                data = yaml.safe_load(f)
    except (OSError, ValueError, yaml.YAMLError) as e:
        raise ConfigError(f"Could not parse config file {path}: {e}", {"path": path})
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"Config file {path} must contain a mapping", {"path": path})
    return data


def _coerce(raw: str, current: Any) -> Any:
    """Parse an environment value with YAML rules and check it against the default's type."""
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as e:
        raise ValueError(str(e))
    if isinstance(current, bool):
        if not isinstance(value, bool):
            raise ValueError(f"expected a boolean, got {raw!r}")
        return value
    if isinstance(current, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ValueError(f"expected an integer, got {raw!r}")
        return value
    if isinstance(current, float):
        # YAML 1.1 reads exponent-only literals such as 1e-8 as strings
        if isinstance(value, bool) or not isinstance(value, (int, float, str)):
            raise ValueError(f"expected a number, got {raw!r}")
        return float(value)
    return value


def env_overrides(environ: Optional[Mapping[str, str]] = None,
                  base: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    """
    Collect ``ESC_LAB_<SECTION>_<KEY>`` overrides for known settings.

    Args:
        environ: Environment mapping, defaults to ``os.environ``
        base: Settings whose keys and value types drive the lookup

    Returns:
        Nested override mapping
    """
    environ = os.environ if environ is None else environ
    base = DEFAULT_CONFIG if base is None else base
    overrides: Dict[str, Any] = {}

    if f"{ENV_PREFIX}SEED" in environ:
        try:
            overrides["seed"] = int(environ[f"{ENV_PREFIX}SEED"])
        except ValueError:
            raise ConfigError(f"{ENV_PREFIX}SEED must be an integer")

    for section, values in base.items():
        if not isinstance(values, dict):
            continue
        for key, current in values.items():
            env_var = f"{ENV_PREFIX}{section.upper()}_{key.upper()}"
            if env_var not in environ:
                continue
            try:
                overrides.setdefault(section, {})[key] = _coerce(environ[env_var], current)
            except ValueError:
                raise ConfigError(f"Invalid value for {env_var}: {environ[env_var]!r}")
    return overrides


def load_config(config_path: Optional[str] = None,
                overrides: Optional[Mapping[str, Any]] = None,
                environ: Optional[Mapping[str, str]] = None) -> Dict[str, Any]:
    """
    Load settings from defaults, an optional file, the environment and overrides.

    Later sources win: defaults, then the ``settings`` section of the file,
    then ``ESC_LAB_*`` variables, then explicit overrides.

    Args:
        config_path: Optional YAML/JSON file with a ``settings`` mapping
        overrides: Optional nested mapping, typically from CLI flags
        environ: Environment mapping, defaults to ``os.environ``

    Returns:
        Configuration dictionary
    """
    if environ is None:
        load_dotenv()

    config = copy.deepcopy(DEFAULT_CONFIG)

    path = config_path or (environ or os.environ).get(f"{ENV_PREFIX}CONFIG")
    if path:
        data = read_config_file(path)
        settings = data.get("settings", {})
        if "seed" in data:
            settings = deep_merge(settings, {"seed": data["seed"]})
        config = deep_merge(config, settings)
        logger.debug(f"Loaded settings from {path}")

    config = deep_merge(config, env_overrides(environ, config))
    if overrides:
        config = deep_merge(config, overrides)

    return config


def configure_logging(verbose: bool = False) -> None:
    """Configure root logging the same way for CLI runs and worker processes."""
    debug = verbose or os.environ.get(f"{ENV_PREFIX}DEBUG", "").lower() in ("1", "true", "yes", "on")
    logging.basicConfig(
        level=logging.DEBUG if debug else logging.WARNING,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )
