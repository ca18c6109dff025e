# sdk/schema.py

"""Schema validation for experiment configs."""

import json
from functools import lru_cache
from pathlib import Path
from typing import Any, Dict

import jsonschema

from packages.core.errors import ConfigError

SCHEMA_DIR = Path(__file__).resolve().parent


class SchemaValidationError(ConfigError):
    """Exception raised when data doesn't match schema."""

    code = "schema_error"


@lru_cache(maxsize=None)
def load_schema(name: str) -> Dict[str, Any]:
    """Load ``<name>.schema.json`` from the sdk package."""
    path = SCHEMA_DIR / f"{name}.schema.json"
    try:
        with open(path) as f:
            return json.load(f)
    except (OSError, ValueError) as e:
        raise ConfigError(f"Could not load schema {path}: {e}")


def validate_schema(data: Any, schema: Dict[str, Any]) -> None:
    """Validate data against a JSON schema."""
    try:
        jsonschema.validate(instance=data, schema=schema)
    except jsonschema.exceptions.ValidationError as e:
        path = "/".join(str(p) for p in e.absolute_path)
        raise SchemaValidationError(f"Invalid config at '{path or '<root>'}': {e.message}",
                                    {"path": path, "validator": e.validator})


def validate_experiment(config: Any) -> None:
    validate_schema(config, load_schema("experiment"))
