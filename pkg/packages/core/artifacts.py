"""Atomic writers and deterministic renderings for CSV, JSON and SVG outputs."""

import dataclasses
import json
import logging
import math
import os
import tempfile
from enum import Enum
from pathlib import Path
from typing import Any, Union

import numpy as np

logger = logging.getLogger(__name__)


def atomic_write_text(path: Union[str, Path], text: str) -> Path:
    """Write ``text`` to a temp file next to ``path`` and rename it into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    logger.debug(f"Wrote {path}")
    return path


def to_jsonable(value: Any) -> Any:
    """Plain Python values; non-finite floats become the strings "inf", "-inf" and "nan"."""
    if dataclasses.is_dataclass(value) and not isinstance(value, type):
        to_dict = getattr(value, "to_dict", None)
        return to_jsonable(to_dict() if callable(to_dict) else dataclasses.asdict(value))
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return to_jsonable(value.tolist())
    if isinstance(value, (complex, np.complexfloating)):
        return {"re": to_jsonable(value.real), "im": to_jsonable(value.imag)}
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isfinite(value):
            return value
        return "nan" if math.isnan(value) else ("inf" if value > 0 else "-inf")
    return value


def dumps_json(value: Any) -> str:
    return json.dumps(to_jsonable(value), indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_json(path: Union[str, Path], value: Any) -> Path:
    return atomic_write_text(path, dumps_json(value))


def trajectory_csv(times: Any, states: Any) -> str:
    """
    Render a trajectory as CSV with header ``t,x1,...,xm``.

    A batch ``(N, B, m)`` is flattened row-wise into columns
    ``x1..xm`` for the first row, then the next row, and so on.
    """
    times = np.asarray(times, dtype=float)
    states = np.asarray(states, dtype=float)
    states = states.reshape(states.shape[0], -1)
    header = ",".join(["t"] + [f"x{i + 1}" for i in range(states.shape[1])])
    lines = [header]
    for t, row in zip(times, states):
        lines.append(",".join("%.17g" % v for v in (t, *row)))
    return "\n".join(lines) + "\n"
