"""
Run configuration. Every numeric knob lives in a frozen dataclass so a run can
be echoed into its manifest and replayed. Values are resolved in the order
built-in defaults, JSON config file, command line flags.
"""

import concurrent.futures
import dataclasses
import json
import logging
import os
from typing import Any, Callable, Dict, Iterable, List, Mapping, Optional, Tuple, TypeVar

from .exceptions import ConfigError

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")

#: Environment variable overriding the worker pool size.
THREADS_ENV = "BARRIERKIT_THREADS"

INTEGRATOR_METHODS = ("rk45", "rk4")

OUTPUT_FORMATS = ("csv", "json", "svg", "png")


def _positive(name: str, value: float) -> None:
    if not value > 0:
        raise ConfigError(f"{name} must be positive, got {value!r}")


def _check_keys(kind: str, data: Mapping[str, Any], allowed: Iterable[str]) -> None:
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown {kind} keys: {', '.join(unknown)}")


@dataclasses.dataclass(frozen=True)
class IntegratorSettings:
    """Settings for :func:`barrierkit.ode.integrate`."""

    #: Either "rk45" (adaptive Dormand-Prince) or "rk4" (fixed step)
    method: str = "rk45"
    atol: float = 1e-10
    rtol: float = 1e-8
    #: Largest step, also the largest gap between consecutive samples
    max_step: float = 0.5
    min_step: float = 1e-12
    first_step: float = 1e-3
    #: Step of the fixed-step method
    fixed_step: float = 1e-2
    #: Event functions are located to within this absolute value
    event_tol: float = 1e-10
    max_steps: int = 200000

    def __post_init__(self) -> None:
        if self.method not in INTEGRATOR_METHODS:
            raise ConfigError(f"unknown integrator method {self.method!r}")
        for name in (
            "atol", "rtol", "max_step", "min_step", "first_step", "fixed_step", "event_tol"
        ):
            _positive(name, getattr(self, name))
        if self.min_step > self.max_step:
            raise ConfigError("min_step exceeds max_step")
        if self.max_steps < 1:
            raise ConfigError("max_steps must be at least 1")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "IntegratorSettings":
        """Build settings from a mapping, rejecting unknown keys."""
        _check_keys("integrator", data, (f.name for f in dataclasses.fields(cls)))
        return cls(**data)


@dataclasses.dataclass(frozen=True)
class BarrierSettings:
    """Settings for barrier tracing."""

    #: Largest backward time span traced
    horizon: float = 1000.0
    #: Largest tolerated Hamiltonian residual
    h_tol: float = 1e-6
    #: Constraint values up to this are still inside the constraint set
    g_tol: float = 1e-9
    max_switches: int = 64
    #: Smallest tolerated reparameterization denominator
    denom_tol: float = 1e-3
    #: Switching functions at most this large are resolved by lookahead
    switch_tol: float = 1e-12
    integrator: IntegratorSettings = dataclasses.field(default_factory=IntegratorSettings)

    def __post_init__(self) -> None:
        for name in ("horizon", "h_tol", "g_tol", "denom_tol", "switch_tol"):
            _positive(name, getattr(self, name))
        if self.max_switches < 0:
            raise ConfigError("max_switches must be nonnegative")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "BarrierSettings":
        """Build settings from a mapping, rejecting unknown keys."""
        _check_keys("barrier", data, (f.name for f in dataclasses.fields(cls)))
        data = dict(data)
        if "integrator" in data:
            data["integrator"] = IntegratorSettings.from_dict(data["integrator"])
        return cls(**data)


@dataclasses.dataclass(frozen=True)
class RunConfig:
    """Everything a CLI run needs, echoed verbatim into its manifest."""

    system: str = "acc"
    params: Dict[str, Any] = dataclasses.field(default_factory=dict)
    control_box: Optional[List[List[float]]] = None
    disturbance_box: Optional[List[List[float]]] = None
    #: Number of z1 values in the default slice grid
    grid: int = 48
    #: Explicit z1 values, overriding `grid`
    z1: Optional[List[float]] = None
    constraint: int = 1
    seed: int = 0
    threads: Optional[int] = None
    out: str = "out"
    formats: Tuple[str, ...] = ("csv", "json", "svg")
    stitch_tol: float = 1e-4
    slice_tol: float = 1e-6
    probe_len: Optional[float] = None
    boundary_points: int = 400
    eps_geo: float = 1e-3
    verify_horizon: float = 60.0
    n_controls: int = 16
    tube_tol: float = 1e-5
    eps: Tuple[float, ...] = (1e-2, 5e-3, 2.5e-3)
    needle_specs: int = 20
    membership_points: int = 500
    barrier: BarrierSettings = dataclasses.field(default_factory=BarrierSettings)

    def __post_init__(self) -> None:
        if self.grid < 1:
            raise ConfigError("grid must contain at least one value")
        if self.constraint < 1:
            raise ConfigError("constraint indices start at 1")
        for name in ("stitch_tol", "slice_tol", "eps_geo", "verify_horizon", "tube_tol"):
            _positive(name, getattr(self, name))
        if self.probe_len is not None:
            _positive("probe_len", self.probe_len)
        if self.threads is not None and self.threads < 1:
            raise ConfigError("threads must be at least 1")
        if not self.eps or any(eps <= 0 for eps in self.eps):
            raise ConfigError("eps must be a nonempty list of positive values")
        for fmt in self.formats:
            if fmt not in OUTPUT_FORMATS:
                raise ConfigError(f"unknown output format {fmt!r}")
        object.__setattr__(self, "formats", tuple(self.formats))
        object.__setattr__(self, "eps", tuple(float(eps) for eps in self.eps))

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "RunConfig":
        """Build a configuration from a mapping, rejecting unknown keys."""
        _check_keys("config", data, (f.name for f in dataclasses.fields(cls)))
        data = dict(data)
        if "barrier" in data:
            data["barrier"] = BarrierSettings.from_dict(data["barrier"])
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path: str) -> "RunConfig":
        """Load a JSON configuration file."""
        try:
            with open(path, "r", encoding="utf-8") as fin:
                data = json.load(fin)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"could not read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        return cls.from_dict(data)

    def to_dict(self) -> Dict[str, Any]:
        """Plain JSON-compatible form of this configuration."""
        data = dataclasses.asdict(self)
        data["formats"] = list(self.formats)
        data["eps"] = list(self.eps)
        return data

    def merge(self, **overrides: Any) -> "RunConfig":
        """Return a copy with the non-None overrides applied."""
        return dataclasses.replace(
            self, **{key: val for key, val in overrides.items() if val is not None}
        )

    def merge_barrier(self, **overrides: Any) -> "RunConfig":
        """Return a copy with non-None barrier or integrator overrides applied."""
        integ_names = {f.name for f in dataclasses.fields(IntegratorSettings)}
        integ = {k: v for k, v in overrides.items() if k in integ_names and v is not None}
        barrier = {
            k: v for k, v in overrides.items() if k not in integ_names and v is not None
        }
        settings = dataclasses.replace(
            self.barrier,
            integrator=dataclasses.replace(self.barrier.integrator, **integ),
            **barrier,
        )
        return dataclasses.replace(self, barrier=settings)


def worker_count(threads: Optional[int] = None) -> int:
    """Resolve the worker pool size from an explicit value or the environment."""
    if threads is not None:
        return max(1, int(threads))
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise ConfigError(f"{THREADS_ENV} must be an integer") from exc
    return 1


def parallel_map(
    func: Callable[[T], R], items: Iterable[T], threads: Optional[int] = None
) -> List[R]:
    """Map `func` over `items`, preserving input order in the output."""
    items = list(items)
    workers = min(worker_count(threads), max(1, len(items)))
    if workers == 1:
        return [func(item) for item in items]
    logger.debug("mapping over worker pool", extra={"workers": workers, "items": len(items)})
    with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, items))
