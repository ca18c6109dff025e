"""Error hierarchy for esclab.

Every error carries a stable ``code`` and serialises to the JSON shape the
CLI prints on standard error.
"""

from typing import Any, Dict, Optional


class EscLabError(Exception):
    """Base class for all esclab errors."""

    code = "esclab_error"
    exit_code = 1

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.details: Dict[str, Any] = details or {}

    def to_dict(self) -> Dict[str, Any]:
        return {"error": self.code, "message": self.message, "details": self.details}


class ConfigError(EscLabError):
    """Raised when an experiment config or query is malformed."""

    code = "config_error"


class CostError(EscLabError):
    """Raised for unknown costs, non-SPD quadratics or missing oracles."""

    code = "cost_error"


class DitherError(EscLabError):
    """Raised when dither rates or amplitudes are not admissible."""

    code = "dither_error"


class MatrixError(EscLabError):
    """Raised for asymmetric or non-positive-definite matrix inputs."""

    code = "matrix_error"


class StabilityError(EscLabError):
    """Raised for invalid stability queries (empty grids, c2 <= 0, ...)."""

    code = "stability_error"


class QuadratureError(EscLabError):
    """Raised when period averaging does not converge."""

    code = "quadrature_error"
    exit_code = 2


class IntegrationError(EscLabError):
    """Raised when a right-hand side evaluates to a non-finite value."""

    code = "integration_error"
    exit_code = 2

    def __init__(self, message: str, time: Optional[float] = None,
                 details: Optional[Dict[str, Any]] = None):
        details = dict(details or {})
        if time is not None:
            details["time"] = float(time)
        super().__init__(message, details)
        self.time = time


class DivergenceError(IntegrationError):
    """Raised where a trajectory exceeding the divergence cutoff is fatal."""

    code = "divergence"
