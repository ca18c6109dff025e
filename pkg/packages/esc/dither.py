"""Sinusoidal dither design and rate admissibility checks."""

import functools
import itertools
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Iterable, List, Sequence, Tuple

import numpy as np

from packages.core.errors import DitherError

logger = logging.getLogger(__name__)

NORMALIZATION_TOL = 1e-12


class Order(str, Enum):
    """Which derivative the dither has to support."""

    FIRST = "first"
    SECOND = "second"


RULES = {
    "equal_rates": "|w_i| = |w_j|",
    "double_rate": "|w_i| = 2|w_j|",
    "sum_diff_rate": "|w_i| +- |w_j| = |w_k|",
    "sum_diff_double": "|w_i| +- |w_j| = 2|w_k|",
    "sum_diff_sum_diff": "|w_i| +- |w_j| = |w_k| +- |w_l|",
}


@dataclass(frozen=True)
class Violation:
    """One failing instance of an admissibility rule; indices are 1-based."""

    rule: str
    indices: Tuple[int, ...]
    rates: Tuple[int, ...]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "rule": self.rule,
            "formula": RULES[self.rule],
            "indices": list(self.indices),
            "rates": list(self.rates),
        }


@dataclass(frozen=True)
class ValidationReport:
    valid: bool
    order: Order
    violations: Tuple[Violation, ...] = ()
    warnings: Tuple[Violation, ...] = ()

    def to_dict(self) -> Dict[str, Any]:
        return {
            "valid": self.valid,
            "order": self.order.value,
            "violations": [v.to_dict() for v in self.violations],
            "warnings": [w.to_dict() for w in self.warnings],
        }


# Each rule is a linear relation sum(c * |w|) = 0 over the listed index slots.
# (rule, number of index slots, coefficient patterns)
_FIRST_ORDER = (
    ("equal_rates", 2, ((1, -1),)),
    ("double_rate", 2, ((1, -2),)),
)
_SECOND_ORDER = (
    ("sum_diff_rate", 3, ((1, 1, -1), (1, -1, -1))),
    ("sum_diff_double", 3, ((1, 1, -2), (1, -1, -2))),
    ("sum_diff_sum_diff", 4, ((1, 1, -1, -1), (1, 1, -1, 1), (1, -1, -1, -1), (1, -1, -1, 1))),
)


def _canonical(coeffs: List[int]) -> Tuple[int, ...]:
    lead = next(c for c in coeffs if c)
    return tuple(coeffs) if lead > 0 else tuple(-c for c in coeffs)


def _scan(magnitudes: Tuple[int, ...], rules, distinct: bool) -> List[Violation]:
    """Enumerate rule instances that hold, deduplicated by their linear relation."""
    n = len(magnitudes)
    seen = set()
    found: List[Violation] = []
    for rule, slots, patterns in rules:
        if distinct:
            tuples: Iterable[Tuple[int, ...]] = itertools.permutations(range(n), slots)
        else:
            tuples = (t for t in itertools.product(range(n), repeat=slots) if len(set(t)) < slots)
        for idx in tuples:
            for pattern in patterns:
                coeffs = [0] * n
                for i, c in zip(idx, pattern):
                    coeffs[i] += c
                if not any(coeffs) or sum(c * m for c, m in zip(coeffs, magnitudes)) != 0:
                    continue
                key = (rule, _canonical(coeffs))
                if key in seen:
                    continue
                seen.add(key)
                found.append(Violation(
                    rule=rule,
                    indices=tuple(i + 1 for i in idx),
                    rates=tuple(int(magnitudes[i]) for i in idx),
                ))
    return found


@functools.lru_cache(maxsize=4096)
def _validate_cached(rates: Tuple[int, ...], order: Order) -> ValidationReport:
    magnitudes = tuple(abs(r) for r in rates)
    violations = _scan(magnitudes, _FIRST_ORDER, distinct=True)
    warnings: List[Violation] = []
    if order is Order.SECOND:
        violations += _scan(magnitudes, _SECOND_ORDER, distinct=True)
        if not violations:
            # Repeated-index instances are outside the stated rules but still
            # bias the averaged Hessian estimate; surface them.
            warnings = _scan(magnitudes, _SECOND_ORDER, distinct=False)
    return ValidationReport(
        valid=not violations,
        order=order,
        violations=tuple(violations),
        warnings=tuple(warnings),
    )


def _as_rates(rates: Sequence[Any]) -> Tuple[int, ...]:
    values = []
    for r in rates:
        if isinstance(r, (bool, np.bool_)) or int(r) != r:
            raise DitherError(f"Dither rates must be integers, got {r!r}")
        if int(r) == 0:
            raise DitherError("Dither rates must be nonzero")
        values.append(int(r))
    if not values:
        raise DitherError("At least one dither rate is required")
    return tuple(values)


def validate_rates(rates: Sequence[int], order: Any = Order.FIRST) -> ValidationReport:
    """
    Check integer dither rates against the averaging rules.

    First order forbids equal magnitudes and one magnitude being twice
    another. Second order additionally forbids sum/difference coincidences
    over three and four distinct indices. Rules needing more indices than
    there are channels hold vacuously.

    Args:
        rates: Nonzero integer rates, one per channel
        order: ``"first"`` or ``"second"``

    Returns:
        A report listing every violated rule instance
    """
    return _validate_cached(_as_rates(rates), Order(order))


def normalize_amplitudes(raw: Sequence[float]) -> np.ndarray:
    """Scale raw relative amplitudes to unit Euclidean norm."""
    raw = np.asarray(raw, dtype=float)
    if raw.ndim != 1 or raw.size == 0:
        raise DitherError("Relative amplitudes must be a non-empty vector")
    if not np.all(np.isfinite(raw)) or np.any(raw == 0.0):
        raise DitherError("Relative amplitudes must be finite and nonzero")
    return raw / np.linalg.norm(raw)


@dataclass(frozen=True)
class DitherSpec:
    """Dither a * r_i * sin(w_i * w * t) on each channel."""

    rates: Tuple[int, ...]
    rel_amplitudes: Tuple[float, ...]
    amplitude: float
    base_frequency: float
    order: Order = Order.FIRST
    rates_array: np.ndarray = field(init=False, repr=False, compare=False)
    amps_array: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        rates = _as_rates(self.rates)
        amps = tuple(float(r) for r in self.rel_amplitudes)
        object.__setattr__(self, "rates", rates)
        object.__setattr__(self, "rel_amplitudes", amps)
        object.__setattr__(self, "order", Order(self.order))
        if len(amps) != len(rates):
            raise DitherError(
                f"Got {len(rates)} rates but {len(amps)} relative amplitudes"
            )
        if any(r == 0.0 or not np.isfinite(r) for r in amps):
            raise DitherError("Relative amplitudes must be finite and nonzero")
        if abs(sum(r * r for r in amps) - 1.0) > NORMALIZATION_TOL:
            raise DitherError("Relative amplitudes must have unit Euclidean norm",
                              {"rel_amplitudes": list(amps)})
        if not (np.isfinite(self.amplitude) and self.amplitude > 0.0):
            raise DitherError(f"Dither amplitude must be positive, got {self.amplitude}")
        if not (np.isfinite(self.base_frequency) and self.base_frequency > 0.0):
            raise DitherError(f"Base frequency must be positive, got {self.base_frequency}")
        report = validate_rates(rates, self.order)
        if not report.valid:
            raise DitherError(
                f"Rates {list(rates)} are not {self.order.value}-order admissible",
                report.to_dict(),
            )
        object.__setattr__(self, "rates_array", np.array(rates, dtype=float))
        object.__setattr__(self, "amps_array", np.array(amps, dtype=float))

    @property
    def n(self) -> int:
        return len(self.rates)

    @property
    def supports_hessian(self) -> bool:
        return validate_rates(self.rates, Order.SECOND).valid

    def with_values(self, amplitude: float = None, base_frequency: float = None) -> "DitherSpec":
        return DitherSpec(
            rates=self.rates,
            rel_amplitudes=self.rel_amplitudes,
            amplitude=self.amplitude if amplitude is None else amplitude,
            base_frequency=self.base_frequency if base_frequency is None else base_frequency,
            order=self.order,
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "rates": list(self.rates),
            "rel_amplitudes": list(self.rel_amplitudes),
            "amplitude": self.amplitude,
            "base_frequency": self.base_frequency,
            "order": self.order.value,
        }


def make_dither(rates: Sequence[int], raw_amplitudes: Sequence[float], amplitude: float,
                base_frequency: float = 1.0, order: Any = Order.FIRST) -> DitherSpec:
    """Build a spec from unnormalised relative amplitudes."""
    return DitherSpec(
        rates=tuple(rates),
        rel_amplitudes=tuple(normalize_amplitudes(raw_amplitudes)),
        amplitude=amplitude,
        base_frequency=base_frequency,
        order=order,
    )


def eval_dither(spec: DitherSpec, tau: Any) -> np.ndarray:
    """
    Evaluate the unit-amplitude dither r_i sin(w_i tau).

    Args:
        spec: Dither spec
        tau: Phase, scalar or array

    Returns:
        Array of shape ``tau.shape + (n,)``
    """
    tau = np.asarray(tau, dtype=float)
    return spec.amps_array * np.sin(tau[..., None] * spec.rates_array)


def absolute_dither(spec: DitherSpec) -> Tuple[np.ndarray, np.ndarray]:
    """Return per-channel amplitudes a*r_i and angular frequencies w_i*w."""
    return spec.amplitude * spec.amps_array, spec.rates_array * spec.base_frequency


def enumerate_admissible(n: int, max_rate: int, order: Any = Order.FIRST) -> List[Tuple[int, ...]]:
    """
    List strictly increasing positive rate vectors that pass validation.

    Args:
        n: Number of channels
        max_rate: Largest rate to consider

    Returns:
        Admissible vectors in lexicographic order
    """
    if n < 1:
        raise DitherError(f"Number of channels must be positive, got {n}")
    order = Order(order)
    return [
        rates for rates in itertools.combinations(range(1, int(max_rate) + 1), n)
        if validate_rates(rates, order).valid
    ]
