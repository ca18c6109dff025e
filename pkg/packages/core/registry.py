"""Registry of costs and ESC algorithms declared in the package manifest."""

import importlib
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, Optional, Tuple

import yaml

from packages.core.errors import ConfigError, CostError
from packages.esc.averaging import QuadratureConfig
from packages.esc.costs import CostFunction
from packages.esc.dither import DitherSpec, Order, make_dither
from packages.esc.dynamics import EscParams, EscSystem, Mode, Variant

logger = logging.getLogger(__name__)

MANIFEST_PATH = Path(__file__).resolve().parent.parent / "esc" / "manifest.yaml"
IMPLEMENTATION_PACKAGE = "packages.esc"


class Registry:
    """Loads the manifest and resolves the dotted implementation of every entry."""

    def __init__(self, manifest_path: Optional[Path] = None):
        self.manifest_path = Path(manifest_path or MANIFEST_PATH)
        self.manifest: Dict[str, Any] = {}
        self.costs: Dict[str, Dict[str, Any]] = {}
        self.algorithms: Dict[str, Dict[str, Any]] = {}
        self.implementations: Dict[str, Callable[..., Any]] = {}
        self._load_manifest()

    def _load_manifest(self) -> None:
        try:
            with open(self.manifest_path) as f:
                self.manifest = yaml.safe_load(f) or {}
        except (OSError, yaml.YAMLError) as e:
            raise ConfigError(f"Could not load manifest {self.manifest_path}: {e}")

        for name, definition in self.manifest.get("costs", {}).items():
            self.costs[name] = definition
            self.implementations[f"cost.{name}"] = self._resolve(definition["implementation"])
        for name, definition in self.manifest.get("algorithms", {}).items():
            Variant(definition["variant"])
            Mode(definition["mode"])
            self.algorithms[name] = definition
            self.implementations[f"algorithm.{name}"] = self._resolve(definition["implementation"])
        logger.debug(f"Registered {len(self.costs)} costs and {len(self.algorithms)} algorithms")

    def _resolve(self, implementation: str) -> Callable[..., Any]:
        module_name, attr = implementation.rsplit(".", 1)
        try:
            module = importlib.import_module(f"{IMPLEMENTATION_PACKAGE}.{module_name}")
            return getattr(module, attr)
        except (ImportError, AttributeError) as e:
            raise ConfigError(f"Cannot resolve implementation '{implementation}': {e}")

    def get_algorithm(self, name: str) -> Dict[str, Any]:
        if name not in self.algorithms:
            raise ConfigError(f"Unknown algorithm: {name}", {"known": sorted(self.algorithms)})
        return self.algorithms[name]

    def get_cost(self, name: str) -> Dict[str, Any]:
        if name not in self.costs:
            raise CostError(f"Unknown cost: {name}", {"known": sorted(self.costs)})
        return self.costs[name]

    def get_all_algorithms(self) -> Dict[str, Dict[str, Any]]:
        return dict(self.algorithms)

    def build_cost(self, cost_id: str, **params: Any) -> CostFunction:
        """Instantiate a cost, filling declared defaults and rejecting missing required inputs."""
        definition = self.get_cost(cost_id)
        kwargs = {}
        for name, spec in (definition.get("inputs") or {}).items():
            value = params.get(name)
            if value is None:
                if spec.get("required"):
                    raise CostError(f"Cost '{cost_id}' requires input '{name}'")
                value = spec.get("default")
            if value is not None:
                kwargs[name] = value
        return self.implementations[f"cost.{cost_id}"](cost_id, **kwargs)

    def build_system(self, algo: str, cost: CostFunction, dither: Optional[DitherSpec] = None,
                     params: Optional[EscParams] = None,
                     quadrature: Optional[QuadratureConfig] = None) -> EscSystem:
        definition = self.get_algorithm(algo)
        factory = self.implementations[f"algorithm.{algo}"]
        return factory(definition["variant"], definition["mode"], cost, params, dither, quadrature)

    def to_json(self) -> Dict[str, Any]:
        return {"costs": self.costs, "algorithms": self.algorithms}


_registry: Optional[Registry] = None


def get_registry() -> Registry:
    global _registry
    if _registry is None:
        _registry = Registry()
    return _registry


@dataclass(frozen=True)
class SystemSpec:
    """
    Picklable description of a system: enough to rebuild it in a worker process.

    ``a`` and ``omega`` are defaults; families override them per grid cell.
    """

    algo: str
    cost: str
    Q: Optional[Tuple[Tuple[float, ...], ...]] = None
    dim: Optional[int] = None
    rates: Tuple[int, ...] = ()
    ramp: Tuple[float, ...] = ()
    a: float = 0.1
    omega: float = 1.0
    k: float = 1.0
    omega_l: float = 1.0
    order: str = Order.FIRST.value
    quadrature: Optional[QuadratureConfig] = None

    @classmethod
    def from_config(cls, system: Dict[str, Any],
                    quadrature: Optional[QuadratureConfig] = None) -> "SystemSpec":
        """Build from the ``system`` mapping of an experiment config."""
        if "algo" not in system or "cost" not in system:
            raise ConfigError("A system needs 'algo' and 'cost'")
        cost = system["cost"]
        cost = {"id": cost} if isinstance(cost, str) else dict(cost)
        dither = system.get("dither") or {}
        gains = system.get("gains") or {}
        rates = tuple(int(r) for r in dither.get("rates", ()))
        ramp = tuple(float(r) for r in dither.get("ramp", [1.0] * len(rates)))
        Q = cost.get("Q")
        if Q is not None:
            try:
                Q = tuple(tuple(float(v) for v in row) for row in Q)
            except (TypeError, ValueError) as e:
                raise CostError(f"Q must be a matrix of numbers: {e}")
        return cls(
            algo=system["algo"],
            cost=cost["id"],
            Q=Q,
            dim=cost.get("dim"),
            rates=rates,
            ramp=ramp,
            a=float(dither.get("a", 0.1)),
            omega=float(dither.get("omega", 1.0)),
            k=float(gains.get("k", 1.0)),
            omega_l=float(gains.get("omega_l", 1.0)),
            order=dither.get("order", Order.FIRST.value),
            quadrature=quadrature,
        )

    def build_cost(self) -> CostFunction:
        return get_registry().build_cost(self.cost, Q=self.Q, dim=self.dim)

    def build_dither(self, a: Optional[float] = None, omega: Optional[float] = None) -> Optional[DitherSpec]:
        if not self.rates:
            return None
        if len(self.ramp) != len(self.rates):
            raise ConfigError(
                f"Got {len(self.rates)} rates but {len(self.ramp)} relative amplitudes"
            )
        return make_dither(self.rates, self.ramp, self.a if a is None else a,
                           self.omega if omega is None else omega, self.order)

    def build(self, a: Optional[float] = None, omega: Optional[float] = None) -> EscSystem:
        return get_registry().build_system(
            self.algo, self.build_cost(), self.build_dither(a, omega),
            EscParams(self.k, self.omega_l), self.quadrature,
        )

    def family(self) -> "SpecFamily":
        return SpecFamily(self)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "algo": self.algo,
            "cost": {"id": self.cost, "Q": self.Q and [list(r) for r in self.Q], "dim": self.dim},
            "dither": {"rates": list(self.rates), "ramp": list(self.ramp), "a": self.a,
                       "omega": self.omega, "order": self.order},
            "gains": {"k": self.k, "omega_l": self.omega_l},
        }


@dataclass(frozen=True)
class SpecFamily:
    """``family(a)`` or ``family(a, omega)``: the described system at other dither values."""

    spec: SystemSpec

    def __call__(self, a: float, omega: Optional[float] = None) -> EscSystem:
        return self.spec.build(a, omega)
