"""
Module defining the constrained, disturbed control systems

    dx/dt = f(x, u, d),   u in U,   d in D,   g_i(x) <= 0

that the rest of barrierkit operates on. Constraint indices are 1-based so
that ``i`` refers to ``g_i`` throughout the library.
"""

import dataclasses
import itertools
import json
import logging
from typing import Any, Callable, Dict, Iterable, Mapping, Optional, Sequence, Tuple

import numpy as np

from .exceptions import ConfigError, NumericalError

logger = logging.getLogger(__name__)

Dynamics = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]
StateFunction = Callable[[np.ndarray], Any]

#: Default threshold on |g_i(x)| for a constraint to count as active
ACTIVE_TOL = 1e-8

# Inputs this far outside their box are clamped with a warning.
_BOX_SLACK = 1e-12


def as_vector(values: Any, size: Optional[int] = None, name: str = "vector") -> np.ndarray:
    """Copy `values` into a flat float array, checking its length."""
    arr = np.array(values, dtype=float).reshape(-1)
    if size is not None and arr.size != size:
        raise ValueError(f"{name} must have length {size}, got {arr.size}")
    return arr


def check_finite(values: np.ndarray, what: str) -> np.ndarray:
    """Raise :class:`NumericalError` naming the first non-finite component."""
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        raise NumericalError(f"non-finite {what} in component {bad[0]}", component=int(bad[0]))
    return values


@dataclasses.dataclass(frozen=True, eq=False)
class Box:
    """Axis aligned box used for input sets and state domains.

    Domain boxes may have infinite bounds; input boxes should not.
    """

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self) -> None:
        lower = np.array(self.lower, dtype=float).reshape(-1)
        upper = np.array(self.upper, dtype=float).reshape(-1)
        if lower.shape != upper.shape or lower.size == 0:
            raise ValueError("box bounds must be nonempty vectors of equal length")
        if np.isnan(lower).any() or np.isnan(upper).any():
            raise ValueError("box bounds must not be NaN")
        if (lower > upper).any():
            raise ValueError("box lower bound exceeds upper bound")
        lower.flags.writeable = False
        upper.flags.writeable = False
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @classmethod
    def from_pairs(cls, pairs: Iterable[Sequence[float]]) -> "Box":
        """Build a box from ``[(lo, hi), ...]``."""
        pairs = [tuple(pair) for pair in pairs]
        if any(len(pair) != 2 for pair in pairs):
            raise ValueError("box pairs must have two entries")
        return cls([pair[0] for pair in pairs], [pair[1] for pair in pairs])

    @classmethod
    def unbounded(cls, size: int) -> "Box":
        """The box covering all of R^size."""
        return cls(np.full(size, -np.inf), np.full(size, np.inf))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Box):
            return NotImplemented
        return np.array_equal(self.lower, other.lower) and np.array_equal(
            self.upper, other.upper
        )

    __hash__ = object.__hash__

    def __repr__(self) -> str:
        return f"Box({self.to_pairs()!r})"

    @property
    def size(self) -> int:
        """Dimension of the box."""
        return self.lower.size

    @property
    def finite(self) -> bool:
        """True when every bound is finite."""
        return bool(np.isfinite(self.lower).all() and np.isfinite(self.upper).all())

    def contains(self, point: Any, tol: float = 0.0) -> bool:
        """Test membership with an absolute slack `tol`."""
        point = np.asarray(point, dtype=float)
        return bool(((point >= self.lower - tol) & (point <= self.upper + tol)).all())

    def clamp(self, point: Any) -> np.ndarray:
        """Nearest point of the box."""
        return np.clip(np.asarray(point, dtype=float), self.lower, self.upper)

    def neutral(self) -> np.ndarray:
        """The point used when a switching function vanishes: the box point
        nearest to the origin."""
        return np.clip(np.zeros(self.size), self.lower, self.upper)

    def midpoint(self) -> np.ndarray:
        """Center of a finite box."""
        return 0.5 * (self.lower + self.upper)

    def vertices(self) -> np.ndarray:
        """Distinct vertices in lexicographic order."""
        axes = [sorted({lo, hi}) for lo, hi in zip(self.lower, self.upper)]
        return np.array(list(itertools.product(*axes)), dtype=float)

    def grid(self, count: int) -> np.ndarray:
        """Tensor grid with `count` points per nondegenerate axis."""
        axes = [
            np.linspace(lo, hi, count) if hi > lo else np.array([lo])
            for lo, hi in zip(self.lower, self.upper)
        ]
        return np.array(list(itertools.product(*axes)), dtype=float)

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        """Uniform samples from a finite box, shape ``(count, size)``."""
        if not self.finite:
            raise ValueError("cannot sample an unbounded box")
        return rng.uniform(self.lower, self.upper, size=(count, self.size))

    def diameter(self) -> float:
        """Euclidean diameter, infinite for unbounded boxes."""
        return float(np.linalg.norm(self.upper - self.lower))

    def to_pairs(self) -> list:
        """Inverse of :meth:`from_pairs`."""
        return [[float(lo), float(hi)] for lo, hi in zip(self.lower, self.upper)]


@dataclasses.dataclass(frozen=True)
class Constraint:
    """A state constraint ``g(x) <= 0`` with its gradient."""

    name: str
    func: StateFunction
    gradient: StateFunction


@dataclasses.dataclass(frozen=True)
class AffineStructure:
    """Input-affine splitting ``f(x, u, d) = f0(x) + Fu(x) u + Fd(x) d``."""

    drift: StateFunction
    control_matrix: StateFunction
    disturbance_matrix: StateFunction


@dataclasses.dataclass(frozen=True)
class ActiveSet:
    """Indices of the constraints active at a state."""

    indices: Tuple[int, ...]
    tol: float = ACTIVE_TOL

    def __bool__(self) -> bool:
        return bool(self.indices)

    def __iter__(self):
        return iter(self.indices)

    def __len__(self) -> int:
        return len(self.indices)

    def __contains__(self, index: object) -> bool:
        return index in self.indices


@dataclasses.dataclass(frozen=True, eq=False)
class ControlSystem:
    """A constrained control system with bounded inputs and disturbances.

    Attributes:
        name (str): Registry name of the system.
        n (int): State dimension.
        m (int): Control dimension.
        w (int): Disturbance dimension.
        dynamics: ``f(x, u, d)``.
        control_box (Box): The control set U.
        disturbance_box (Box): The disturbance set D.
        constraints (tuple[Constraint]): ``g_1 .. g_p``.
        state_jacobian: Optional analytic ``df/dx``; finite differences are
            used when absent.
        affine (AffineStructure, optional): Input-affine splitting, enables
            closed-form saddle points.
        domain (Box): Declared state domain.
        params (dict): Parameters echoed into run manifests.
    """

    name: str
    n: int
    m: int
    w: int
    dynamics: Dynamics
    control_box: Box
    disturbance_box: Box
    constraints: Tuple[Constraint, ...]
    state_jacobian: Optional[Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]] = None
    affine: Optional[AffineStructure] = None
    domain: Optional[Box] = None
    params: Mapping[str, Any] = dataclasses.field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.n < 2:
            raise ValueError("state dimension must be at least 2")
        if not self.constraints:
            raise ValueError("at least one constraint is required")
        if self.control_box.size != self.m:
            raise ValueError("control box does not match control dimension")
        if self.disturbance_box.size != self.w:
            raise ValueError("disturbance box does not match disturbance dimension")
        if not (self.control_box.finite and self.disturbance_box.finite):
            raise ValueError("input boxes must be bounded")
        object.__setattr__(self, "constraints", tuple(self.constraints))
        if self.domain is None:
            object.__setattr__(self, "domain", Box.unbounded(self.n))
        elif self.domain.size != self.n:
            raise ValueError("domain box does not match state dimension")

    @property
    def p(self) -> int:
        """Number of constraints."""
        return len(self.constraints)

    @property
    def jacobian_kind(self) -> str:
        """How state Jacobians are computed."""
        return "analytic" if self.state_jacobian is not None else "finite-difference"

    def constraint(self, i: int) -> Constraint:
        """Constraint ``g_i`` for 1-based `i`."""
        if not 1 <= i <= self.p:
            raise ValueError(f"constraint index {i} outside 1..{self.p}")
        return self.constraints[i - 1]


def _admissible(box: Box, value: Any, kind: str, clamp: bool) -> np.ndarray:
    value = as_vector(value, box.size, kind)
    if box.contains(value, _BOX_SLACK):
        return box.clamp(value)
    if not clamp:
        raise ValueError(f"{kind} {value.tolist()} outside its box")
    clamped = box.clamp(value)
    logger.warning(
        "%s outside its box, clamping",
        kind,
        extra={"value": value.tolist(), "clamped": clamped.tolist()},
    )
    return clamped


def eval_dynamics(
    sys: ControlSystem, x: Any, u: Any, d: Any, *, clamp: bool = True
) -> np.ndarray:
    """Evaluate ``f(x, u, d)``.

    Inputs outside their boxes are clamped with a warning, or rejected when
    `clamp` is False.

    Raises:
        NumericalError: A component of f is not finite.
    """
    x = as_vector(x, sys.n, "state")
    u = _admissible(sys.control_box, u, "control", clamp)
    d = _admissible(sys.disturbance_box, d, "disturbance", clamp)
    xdot = as_vector(sys.dynamics(x, u, d), sys.n, "dynamics")
    return check_finite(xdot, "dynamics")


def finite_difference_jacobian(func: Callable[[np.ndarray], np.ndarray], x: Any) -> np.ndarray:
    """Central difference Jacobian with step ``max(1e-6, 1e-6 |x_j|)``."""
    x = as_vector(x)
    columns = []
    for j in range(x.size):
        step = max(1e-6, 1e-6 * abs(x[j]))
        xp = x.copy()
        xm = x.copy()
        xp[j] += step
        xm[j] -= step
        columns.append(
            (np.asarray(func(xp), float) - np.asarray(func(xm), float)) / (xp[j] - xm[j])
        )
    return np.column_stack(columns)


def eval_state_jacobian(sys: ControlSystem, x: Any, u: Any, d: Any) -> np.ndarray:
    """Evaluate ``df/dx`` at ``(x, u, d)``, analytically when available."""
    x = as_vector(x, sys.n, "state")
    u = _admissible(sys.control_box, u, "control", True)
    d = _admissible(sys.disturbance_box, d, "disturbance", True)
    if sys.state_jacobian is not None:
        jac = np.asarray(sys.state_jacobian(x, u, d), dtype=float)
    else:
        jac = finite_difference_jacobian(lambda xx: sys.dynamics(xx, u, d), x)
    if jac.shape != (sys.n, sys.n):
        raise ValueError(f"state Jacobian must have shape {(sys.n, sys.n)}")
    return check_finite(jac, "state Jacobian")


def constraint_values(sys: ControlSystem, x: Any) -> np.ndarray:
    """All constraint values ``(g_1(x), ..., g_p(x))``."""
    x = as_vector(x, sys.n, "state")
    return check_finite(
        np.array([float(con.func(x)) for con in sys.constraints]), "constraint value"
    )


def constraint_gradient(sys: ControlSystem, i: int, x: Any) -> np.ndarray:
    """Gradient of ``g_i`` at `x`."""
    x = as_vector(x, sys.n, "state")
    return check_finite(as_vector(sys.constraint(i).gradient(x), sys.n), "constraint gradient")


def active_set(sys: ControlSystem, x: Any, tol: float = ACTIVE_TOL) -> ActiveSet:
    """Indices ``i`` with ``|g_i(x)| <= tol``."""
    if tol <= 0:
        raise ValueError("active set tolerance must be positive")
    values = constraint_values(sys, x)
    return ActiveSet(tuple(i + 1 for i, val in enumerate(values) if abs(val) <= tol), tol)


def lie_derivative(sys: ControlSystem, i: int, x: Any, u: Any, d: Any) -> float:
    """``L_f g_i(x, u, d) = Dg_i(x) . f(x, u, d)``."""
    return float(constraint_gradient(sys, i, x) @ eval_dynamics(sys, x, u, d))


def in_domain(sys: ControlSystem, x: Any, tol: float = 0.0) -> bool:
    """True when `x` lies in the declared state domain."""
    return sys.domain.contains(as_vector(x, sys.n, "state"), tol)


def in_constraint_set(sys: ControlSystem, x: Any, tol: float = 0.0) -> bool:
    """True when every ``g_i(x) <= tol``."""
    return bool((constraint_values(sys, x) <= tol).all())


def affine_terms(sys: ControlSystem, x: Any) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return ``(f0(x), Fu(x), Fd(x))`` for an input-affine system."""
    if sys.affine is None:
        raise ValueError(f"system {sys.name} declares no affine structure")
    x = as_vector(x, sys.n, "state")
    drift = as_vector(sys.affine.drift(x), sys.n, "drift")
    fu = np.asarray(sys.affine.control_matrix(x), dtype=float).reshape(sys.n, sys.m)
    fd = np.asarray(sys.affine.disturbance_matrix(x), dtype=float).reshape(sys.n, sys.w)
    return drift, fu, fd


def affine_discrepancy(sys: ControlSystem, rng: np.random.Generator, count: int = 100) -> float:
    """Largest difference between f and its declared affine splitting over
    random samples drawn from the domain (or ``[-10, 10]^n`` where unbounded)."""
    lower = np.where(np.isfinite(sys.domain.lower), sys.domain.lower, -10.0)
    upper = np.where(np.isfinite(sys.domain.upper), sys.domain.upper, 10.0)
    worst = 0.0
    for _ in range(count):
        x = rng.uniform(lower, upper)
        u = sys.control_box.sample(rng, 1)[0]
        d = sys.disturbance_box.sample(rng, 1)[0]
        drift, fu, fd = affine_terms(sys, x)
        worst = max(
            worst, float(np.max(np.abs(eval_dynamics(sys, x, u, d) - drift - fu @ u - fd @ d)))
        )
    return worst


SystemBuilder = Callable[..., ControlSystem]

_REGISTRY: Dict[str, SystemBuilder] = {}


def register_system(name: str, builder: SystemBuilder) -> None:
    """Make `builder` available to :func:`get_system` under `name`.

    Builders are called as ``builder(params, control_box=..., disturbance_box=...)``
    where the boxes are lists of ``[lo, hi]`` pairs or None for defaults.
    """
    if name in _REGISTRY and _REGISTRY[name] is not builder:
        raise ValueError(f"system {name!r} already registered")
    _REGISTRY[name] = builder


def registered_systems() -> Tuple[str, ...]:
    """Names accepted by :func:`get_system`."""
    return tuple(sorted(_REGISTRY))


def get_system(
    name: str,
    params: Optional[Mapping[str, Any]] = None,
    control_box: Optional[Sequence[Sequence[float]]] = None,
    disturbance_box: Optional[Sequence[Sequence[float]]] = None,
) -> ControlSystem:
    """Instantiate a registered system.

    Raises:
        ConfigError: Unknown system name or invalid parameters.
    """
    builder = _REGISTRY.get(name)
    if builder is None:
        raise ConfigError(f"unknown system {name!r}")
    try:
        return builder(dict(params or {}), control_box=control_box, disturbance_box=disturbance_box)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid parameters for system {name!r}: {exc}") from exc


_SYSTEM_FILE_KEYS = ("system", "params", "control_box", "disturbance_box")


def read_system_file(path: str) -> Dict[str, Any]:
    """Read and validate a JSON system file holding the keys ``system``,
    ``params``, ``control_box`` and ``disturbance_box``.

    Raises:
        ConfigError: The file is unreadable or malformed.
    """
    try:
        with open(path, "r", encoding="utf-8") as fin:
            data = json.load(fin)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"could not read system file {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("system file must hold a JSON object")
    unknown = sorted(set(data) - set(_SYSTEM_FILE_KEYS))
    if unknown:
        raise ConfigError(f"unknown system file keys: {', '.join(unknown)}")
    if "system" not in data:
        raise ConfigError("system file must name a system")
    return data


def load_system(path: str) -> ControlSystem:
    """Load a system from a JSON system file."""
    data = read_system_file(path)
    return get_system(
        data["system"], data.get("params"), data.get("control_box"), data.get("disturbance_box")
    )


_LINEAR_KEYS = ("A", "B", "E", "constraints")


def linear_system(
    params: Mapping[str, Any],
    *,
    control_box: Optional[Sequence[Sequence[float]]] = None,
    disturbance_box: Optional[Sequence[Sequence[float]]] = None,
) -> ControlSystem:
    """Linear system ``dx/dt = A x + B u + E d`` with half-space constraints.

    Each constraint row ``[c_1, ..., c_n, b]`` means ``c . x - b <= 0``. The
    defaults give a disturbed double integrator kept within ``|x_1| <= 1``.
    """
    unknown = sorted(set(params) - set(_LINEAR_KEYS))
    if unknown:
        raise ConfigError(f"unknown linear system parameters: {', '.join(unknown)}")
    amat = np.array(params.get("A", [[0.0, 1.0], [0.0, 0.0]]), dtype=float)
    bmat = np.array(params.get("B", [[0.0], [1.0]]), dtype=float)
    emat = np.array(params.get("E", [[0.0], [1.0]]), dtype=float)
    rows = np.array(params.get("constraints", [[1.0, 0.0, 1.0], [-1.0, 0.0, 1.0]]), dtype=float)
    n = amat.shape[0]
    if amat.shape != (n, n) or bmat.ndim != 2 or emat.ndim != 2:
        raise ConfigError("A must be square and B, E two dimensional")
    if bmat.shape[0] != n or emat.shape[0] != n or rows.ndim != 2 or rows.shape[1] != n + 1:
        raise ConfigError("linear system matrices have inconsistent shapes")
    for arr in (amat, bmat, emat, rows):
        arr.flags.writeable = False

    ubox = Box.from_pairs(control_box or [[-1.0, 1.0]] * bmat.shape[1])
    dbox = Box.from_pairs(disturbance_box or [[-0.5, 0.5]] * emat.shape[1])

    def make_constraint(k: int, row: np.ndarray) -> Constraint:
        normal = row[:n].copy()
        offset = float(row[n])
        return Constraint(
            f"g{k + 1}",
            lambda x: float(normal @ x - offset),
            lambda x: normal.copy(),
        )

    return ControlSystem(
        name="linear",
        n=n,
        m=bmat.shape[1],
        w=emat.shape[1],
        dynamics=lambda x, u, d: amat @ x + bmat @ u + emat @ d,
        control_box=ubox,
        disturbance_box=dbox,
        constraints=tuple(make_constraint(k, row) for k, row in enumerate(rows)),
        state_jacobian=lambda x, u, d: amat.copy(),
        affine=AffineStructure(
            drift=lambda x: amat @ x,
            control_matrix=lambda x: bmat,
            disturbance_matrix=lambda x: emat,
        ),
        params={
            "A": amat.tolist(),
            "B": bmat.tolist(),
            "E": emat.tolist(),
            "constraints": rows.tolist(),
        },
    )


register_system("linear", linear_system)
