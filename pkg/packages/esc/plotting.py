"""Deterministic SVG phase portraits of planar ESC flows."""

import io
import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from packages.core.artifacts import atomic_write_text  # noqa: E402
from packages.core.errors import ConfigError  # noqa: E402
from packages.esc.integrator import IntegratorConfig, Trajectory, integrate  # noqa: E402

logger = logging.getLogger(__name__)

SVG_RC = {"svg.hashsalt": "esc-lab", "svg.fonttype": "path", "path.simplify": False}


class PlotStyle(str, Enum):
    STREAM = "stream"
    TRAJECTORY = "trajectory"


@dataclass
class PlotSettings:
    grid: int = 9
    viewport: float = 2.0
    stream_length: float = 4.0
    stream_steps: int = 400
    width: float = 6.0
    height: float = 6.0

    @classmethod
    def from_settings(cls, settings: Optional[Dict[str, Any]] = None) -> "PlotSettings":
        settings = settings or {}
        return cls(**{k: v for k, v in settings.items() if k in cls.__dataclass_fields__})


def seed_grid(settings: PlotSettings) -> np.ndarray:
    axis = np.linspace(-settings.viewport, settings.viewport, settings.grid)
    xx, yy = np.meshgrid(axis, axis)
    return np.column_stack([xx.ravel(), yy.ravel()])


def _unit_field(field: Callable[[np.ndarray], np.ndarray], sign: float):
    def rhs(t: float, x: np.ndarray) -> np.ndarray:
        v = np.asarray(field(x), dtype=float)
        norm = np.linalg.norm(v, axis=-1, keepdims=True)
        return sign * np.divide(v, norm, out=np.zeros_like(v), where=norm > 0.0)

    return rhs


def streamlines(field: Callable[[np.ndarray], np.ndarray],
                settings: Optional[PlotSettings] = None) -> List[np.ndarray]:
    """
    Streamlines through a fixed grid of seeds.

    Each line follows the arc-length normalised field backward and forward
    from its seed; points outside the viewport are masked with NaN.
    """
    settings = settings or PlotSettings()
    seeds = seed_grid(settings)
    cfg = IntegratorConfig(t_span=(0.0, settings.stream_length),
                           step=settings.stream_length / settings.stream_steps)
    forward = integrate(_unit_field(field, 1.0), seeds, cfg).states
    backward = integrate(_unit_field(field, -1.0), seeds, cfg).states
    lines = []
    limit = 1.05 * settings.viewport
    for i in range(seeds.shape[0]):
        line = np.vstack([backward[:0:-1, i], forward[:, i]])
        line[np.any(np.abs(line) > limit, axis=1)] = np.nan
        lines.append(line)
    return lines


def _finish(fig, ax, settings: PlotSettings, title: Optional[str]) -> str:
    ax.set_xlim(-settings.viewport, settings.viewport)
    ax.set_ylim(-settings.viewport, settings.viewport)
    ax.set_aspect("equal")
    ax.set_xlabel("x1")
    ax.set_ylabel("x2")
    if title:
        ax.set_title(title)
    buffer = io.StringIO()
    with plt.rc_context(SVG_RC):
        fig.savefig(buffer, format="svg", metadata={"Date": None})
    return buffer.getvalue()


def render_stream(field: Callable[[np.ndarray], np.ndarray],
                  settings: Optional[PlotSettings] = None, title: Optional[str] = None) -> str:
    settings = settings or PlotSettings()
    with plt.rc_context(SVG_RC):
        fig, ax = plt.subplots(figsize=(settings.width, settings.height))
    try:
        for line in streamlines(field, settings):
            ax.plot(line[:, 0], line[:, 1], color="tab:blue", linewidth=0.8)
        seeds = seed_grid(settings)
        arrows = _unit_field(field, 1.0)(0.0, seeds)
        ax.quiver(seeds[:, 0], seeds[:, 1], arrows[:, 0], arrows[:, 1],
                  color="tab:red", angles="xy", pivot="mid", width=0.004)
        return _finish(fig, ax, settings, title)
    finally:
        plt.close(fig)


def render_trajectory(traj: Trajectory, settings: Optional[PlotSettings] = None,
                      title: Optional[str] = None) -> str:
    settings = settings or PlotSettings()
    states = traj.states if traj.batched else traj.states[:, None, :]
    if states.shape[-1] != 2:
        raise ConfigError(f"Trajectory plots need a 2-D state, got dimension {states.shape[-1]}")
    with plt.rc_context(SVG_RC):
        fig, ax = plt.subplots(figsize=(settings.width, settings.height))
    try:
        for b in range(states.shape[1]):
            ax.plot(states[:, b, 0], states[:, b, 1], linewidth=0.8)
            ax.plot(states[0, b, 0], states[0, b, 1], marker="o", color="black", markersize=3)
        return _finish(fig, ax, settings, title)
    finally:
        plt.close(fig)


def emit_plot(path: Union[str, Path], style: Any = PlotStyle.STREAM,
              field: Optional[Callable[[np.ndarray], np.ndarray]] = None,
              trajectory: Optional[Trajectory] = None, dim: int = 2,
              settings: Optional[PlotSettings] = None, title: Optional[str] = None) -> Path:
    """
    Write an SVG phase portrait.

    Args:
        path: Output file, written atomically
        style: ``stream`` for a vector field, ``trajectory`` for sampled solutions
        field: Batched planar field ``x -> dx/dt`` (stream style)
        trajectory: Trajectory to draw (trajectory style)
        dim: State dimension of ``field``; anything but 2 is rejected

    Returns:
        The written path
    """
    style = PlotStyle(style)
    if style is PlotStyle.STREAM:
        if field is None:
            raise ConfigError("Stream plots need a vector field")
        if dim != 2:
            raise ConfigError(f"Stream plots need a 2-D state space, got dimension {dim}")
        svg = render_stream(field, settings, title)
    else:
        if trajectory is None:
            raise ConfigError("Trajectory plots need a trajectory")
        svg = render_trajectory(trajectory, settings, title)
    logger.info(f"Writing {style.value} plot to {path}")
    return atomic_write_text(path, svg)
