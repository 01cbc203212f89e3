"""
Adaptive cruise control. A follower with speed ``x2`` keeps a distance ``x3``
behind a leader with speed ``x1``:

    dx1/dt = a + d1
    dx2/dt = -(a0 + a1 x2 + a2 x2^2) + grav d2 + grav u
    dx3/dt = x1 - x2

subject to the time headway ``g1 = tau x2 - x3 <= 0`` and the maximal distance
``g2 = x3 - d_max <= 0``. The drag coefficients are ``a_k = f_k / mass``.
"""

import dataclasses
import logging
import math
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .assemble import (
    AdmissibleSetSlice,
    Segment,
    build_slice,
    closure_gap,
    junction_angle,
    slice_area,
    usable_part,
)
from .barrier import BarrierTrajectory, trace_barrier_reparam
from .config import BarrierSettings, RunConfig, parallel_map
from .exceptions import BarrierKitException, ConfigError, NoBound, NoRoot
from .sysmodel import AffineStructure, Box, Constraint, ControlSystem, register_system
from .tangency import CandidateFilter, TangencyPoint, filter_candidates, make_tangency_point

logger = logging.getLogger(__name__)

#: Recorded in every manifest; the slices are only valid under it.
CLOSURE_ASSUMPTION = (
    "the barrier part of the admissible set boundary is assumed to be closed; "
    "this is not verified numerically"
)


@dataclasses.dataclass(frozen=True)
class AccParameters:
    """Physical parameters and input bounds of the cruise control model."""

    tau: float = 1.8
    d_max: float = 100.0
    mass: float = 1650.0
    f0: float = 0.1
    f1: float = 5.0
    f2: float = 0.25
    #: Nominal leader acceleration
    a: float = 0.0
    grav: float = 9.81
    u_box: Tuple[float, float] = (-0.5, 0.5)
    d1_box: Tuple[float, float] = (-0.3, 0.3)
    d2_box: Tuple[float, float] = (-0.4, 0.4)

    def __post_init__(self) -> None:
        for name in ("tau", "d_max", "mass", "grav"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.f2 <= 0 or self.f0 < 0 or self.f1 < 0:
            raise ConfigError("drag coefficients must be nonnegative with f2 positive")
        for name in ("u_box", "d1_box", "d2_box"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigError(f"{name} lower bound exceeds upper bound")
            object.__setattr__(self, name, (float(lo), float(hi)))

    @property
    def a0(self) -> float:
        """Constant drag term."""
        return self.f0 / self.mass

    @property
    def a1(self) -> float:
        """Linear drag term."""
        return self.f1 / self.mass

    @property
    def a2(self) -> float:
        """Quadratic drag term."""
        return self.f2 / self.mass

    @classmethod
    def from_dict(
        cls,
        params: Mapping[str, Any],
        control_box: Optional[Sequence[Sequence[float]]] = None,
        disturbance_box: Optional[Sequence[Sequence[float]]] = None,
    ) -> "AccParameters":
        """Build parameters from a mapping of scalar fields and optional boxes."""
        scalars = {f.name for f in dataclasses.fields(cls)} - {"u_box", "d1_box", "d2_box"}
        unknown = sorted(set(params) - scalars)
        if unknown:
            raise ConfigError(f"unknown acc parameters: {', '.join(unknown)}")
        values: Dict[str, Any] = {key: float(val) for key, val in params.items()}
        if control_box is not None:
            if len(control_box) != 1:
                raise ConfigError("acc has one control")
            values["u_box"] = tuple(control_box[0])
        if disturbance_box is not None:
            if len(disturbance_box) != 2:
                raise ConfigError("acc has two disturbances")
            values["d1_box"] = tuple(disturbance_box[0])
            values["d2_box"] = tuple(disturbance_box[1])
        return cls(**values)

    def to_dict(self) -> Dict[str, Any]:
        """Scalar fields plus the derived drag terms."""
        data = dataclasses.asdict(self)
        data.update(a0=self.a0, a1=self.a1, a2=self.a2)
        for name in ("u_box", "d1_box", "d2_box"):
            data[name] = list(data[name])
        return data


def acc_nominal_parameters(p: Optional[AccParameters] = None) -> AccParameters:
    """Same parameters without disturbances, for comparing the robust set
    with the disturbance-free one."""
    return dataclasses.replace(p or AccParameters(), d1_box=(0.0, 0.0), d2_box=(0.0, 0.0))


def acc_speed_bound(p: AccParameters) -> float:
    """Largest leader speed ``x1`` the follower can still match under the
    worst disturbances; the upper end of the speed domain.

    Raises:
        NoBound: The defining quadratic has no real root.
    """
    grav = p.grav
    reach = grav * p.d2_box[0] + grav * p.u_box[1] - p.a0 - p.a - p.d1_box[1]
    disc = p.a1**2 + 4 * p.a2 * reach
    if disc < 0:
        raise NoBound(f"speed bound quadratic has negative discriminant {disc:.6g}")
    return (-p.a1 + math.sqrt(disc)) / (2 * p.a2)


def acc_domain_box(p: AccParameters) -> Box:
    """State domain ``[0, x1max] x [0, 2 x1max] x [0, 2 d_max]``."""
    bound = acc_speed_bound(p)
    return Box([0.0, 0.0, 0.0], [bound, 2 * bound, 2 * p.d_max])


def acc_system(p: Optional[AccParameters] = None) -> ControlSystem:
    """Build the cruise control system for parameters `p`."""
    p = p or AccParameters()
    a0, a1, a2, grav = p.a0, p.a1, p.a2, p.grav
    tau, d_max = p.tau, p.d_max
    control_matrix = np.array([[0.0], [grav], [0.0]])
    disturbance_matrix = np.array([[1.0, 0.0], [0.0, grav], [0.0, 0.0]])
    control_matrix.flags.writeable = False
    disturbance_matrix.flags.writeable = False

    def drift(x):
        return np.array([p.a, -(a0 + a1 * x[1] + a2 * x[1] ** 2), x[0] - x[1]])

    def dynamics(x, u, d):
        return np.array(
            [
                p.a + d[0],
                -(a0 + a1 * x[1] + a2 * x[1] ** 2) + grav * d[1] + grav * u[0],
                x[0] - x[1],
            ]
        )

    def jacobian(x, _u, _d):
        return np.array(
            [
                [0.0, 0.0, 0.0],
                [0.0, -(a1 + 2 * a2 * x[1]), 0.0],
                [1.0, -1.0, 0.0],
            ]
        )

    try:
        domain = acc_domain_box(p)
    except NoBound:
        logger.warning("no speed bound, using an unbounded speed domain")
        domain = Box([0.0, 0.0, 0.0], [np.inf, np.inf, 2 * d_max])

    return ControlSystem(
        name="acc",
        n=3,
        m=1,
        w=2,
        dynamics=dynamics,
        control_box=Box.from_pairs([p.u_box]),
        disturbance_box=Box.from_pairs([p.d1_box, p.d2_box]),
        constraints=(
            Constraint("g1", lambda x: tau * x[1] - x[2], lambda x: np.array([0.0, tau, -1.0])),
            Constraint("g2", lambda x: x[2] - d_max, lambda x: np.array([0.0, 0.0, 1.0])),
        ),
        state_jacobian=jacobian,
        affine=AffineStructure(
            drift=drift,
            control_matrix=lambda x: control_matrix,
            disturbance_matrix=lambda x: disturbance_matrix,
        ),
        domain=domain,
        params=p.to_dict(),
    )


def _build_acc(params, *, control_box=None, disturbance_box=None) -> ControlSystem:
    return acc_system(AccParameters.from_dict(params, control_box, disturbance_box))


register_system("acc", _build_acc)


def acc_tangency_g1(
    p: AccParameters, z1: float, sys: Optional[ControlSystem] = None
) -> List[TangencyPoint]:
    """Closed-form tangency points on the headway constraint for leader
    speed `z1`, smaller root first.

    Raises:
        NoRoot: The quadratic in ``z2`` has no real root.
    """
    sys = sys or acc_system(p)
    grav = p.grav
    half = (1 - p.tau * p.a1) / (2 * p.tau * p.a2)
    const = (z1 + p.tau * (p.a0 - grav * p.u_box[0] - grav * p.d2_box[1])) / (p.tau * p.a2)
    disc = half**2 - const
    if disc < 0:
        raise NoRoot(f"no headway tangency point for z1={z1}")
    root = math.sqrt(disc)
    upper = half + root
    # Vieta's formula keeps the small root accurate.
    lower = const / upper if upper != 0 else half - root
    points = []
    for z2 in sorted({lower, upper}):
        points.append(make_tangency_point(sys, 1, [z1, z2, p.tau * z2], (z1,)))
    return points


def acc_tangency_g2(
    p: AccParameters, z1: float, sys: Optional[ControlSystem] = None
) -> TangencyPoint:
    """Tangency point ``(z1, z1, d_max)`` on the distance constraint.

    Raises:
        ValueError: `z1` lies outside the speed domain.
    """
    sys = sys or acc_system(p)
    bound = acc_speed_bound(p)
    if not -1e-12 <= z1 <= bound + 1e-12:
        raise ValueError(f"z1={z1} outside the speed domain [0, {bound}]")
    return make_tangency_point(sys, 2, [z1, z1, p.d_max], (z1,))


def acc_boundary_grid(p: AccParameters, i: int, z1: float, count: int = 400) -> np.ndarray:
    """Ordered states on ``g_i = 0`` at leader speed `z1`, inside the domain."""
    bound = acc_speed_bound(p)
    if i == 1:
        x2 = np.linspace(0.0, min(p.d_max / p.tau, 2 * bound), count)
        x3 = p.tau * x2
    elif i == 2:
        x2 = np.linspace(0.0, 2 * bound, count)
        x3 = np.full(count, p.d_max)
    else:
        raise ValueError(f"acc has no constraint {i}")
    return np.column_stack([np.full(count, z1), x2, x3])


#: Inputs ``(u, d1, d2)`` along each branch, as box-bound selectors.
BRANCH_INPUTS = {1: ("lower", "lower", "upper"), 2: ("upper", "upper", "lower")}


def branch_inputs(p: AccParameters, i: int) -> np.ndarray:
    """Expected ``(u, d1, d2)`` along a barrier through ``g_i``."""
    boxes = (p.u_box, p.d1_box, p.d2_box)
    return np.array(
        [box[0] if side == "lower" else box[1] for box, side in zip(boxes, BRANCH_INPUTS[i])]
    )


def check_branch_inputs(p: AccParameters, traj: BarrierTrajectory) -> bool:
    """True when every sample applies the branch's bang-bang inputs."""
    expected = branch_inputs(p, traj.origin.active_index)
    applied = np.hstack([traj.u, traj.d])
    return bool(np.all(applied == expected))


@dataclasses.dataclass(eq=False)
class SliceResult:
    """Everything computed for one leader speed."""

    z1: float
    status: str
    reason: str = ""
    slice: Optional[AdmissibleSetSlice] = None
    arcs: List[BarrierTrajectory] = dataclasses.field(default_factory=list)
    candidates: Optional[CandidateFilter] = None
    usable: List[Segment] = dataclasses.field(default_factory=list)
    checks: Dict[str, Any] = dataclasses.field(default_factory=dict)

    @property
    def area(self) -> float:
        """Slice area, NaN when the slice failed."""
        return slice_area(self.slice) if self.slice is not None else float("nan")

    def to_dict(self) -> Dict[str, Any]:
        """Manifest entry."""
        entry: Dict[str, Any] = {
            "z1": self.z1,
            "status": self.status,
            "reason": self.reason,
            "area": self.area if self.slice is not None else None,
            "checks": self.checks,
            "arcs": [
                {
                    "constraint": arc.origin.active_index,
                    "origin": arc.origin.z.tolist(),
                    "endpoint": arc.endpoint.tolist(),
                    "termination": arc.termination.name,
                    "exit_index": arc.exit_index,
                    "parameterization": arc.parameterization,
                    "samples": len(arc),
                    "max_hamiltonian": arc.max_hamiltonian,
                }
                for arc in self.arcs
            ],
        }
        if self.candidates is not None:
            entry["accepted"] = [tp.to_dict() for tp in self.candidates.accepted]
            entry["discarded"] = [
                dict(tp.to_dict(), reason=reason) for tp, reason in self.candidates.discarded
            ]
        return entry


def _candidates(p: AccParameters, sys: ControlSystem, z1: float) -> List[TangencyPoint]:
    points: List[TangencyPoint] = []
    try:
        points.extend(acc_tangency_g1(p, z1, sys))
    except NoRoot as exc:
        logger.info("%s", exc)
    try:
        points.append(acc_tangency_g2(p, z1, sys))
    except ValueError as exc:
        logger.info("%s", exc)
    return points


def trace_acc_barrier(
    sys: ControlSystem, tp: TangencyPoint, settings: BarrierSettings
) -> BarrierTrajectory:
    """Barrier through `tp` parameterized by the leader speed, falling back
    to time when the leader speed is stationary."""
    return trace_barrier_reparam(sys, tp, settings, coordinate=0, fallback=True)


def acc_slice(
    p: AccParameters,
    z1: float,
    config: Optional[RunConfig] = None,
    sys: Optional[ControlSystem] = None,
) -> SliceResult:
    """Compute the admissible set slice at leader speed `z1`.

    Failures are reported in the result instead of raised so that one bad
    slice does not abort a batch.
    """
    config = config or RunConfig()
    sys = sys or acc_system(p)
    settings = config.barrier
    z1 = float(z1)
    try:
        candidates = filter_candidates(sys, _candidates(p, sys, z1), config.probe_len, settings)
        arcs = [trace_acc_barrier(sys, tp, settings) for tp in candidates.accepted]
        usable = []
        for i in (1, 2):
            grid = acc_boundary_grid(p, i, z1, config.boundary_points)
            usable.extend(usable_part(sys, i, grid, g_tol=settings.g_tol))
        slice_ = build_slice(sys, z1, arcs, usable, coords=(1, 2), stitch_tol=config.stitch_tol)
    except BarrierKitException as exc:
        logger.warning("slice failed: %s", exc, extra={"z1": z1, "error": type(exc).__name__})
        return SliceResult(z1, "failed", f"{type(exc).__name__}: {exc}")

    checks = {
        "max_hamiltonian": max((arc.max_hamiltonian for arc in arcs), default=0.0),
        "junction_angles": [junction_angle(sys, arc) for arc in arcs],
        "tangency_residuals": [
            max(abs(tp.residual_g), abs(tp.residual_lie)) for tp in candidates.accepted
        ],
        "branch_inputs": [check_branch_inputs(p, arc) for arc in arcs],
        "closure_gap": closure_gap(slice_),
    }
    result = SliceResult(z1, "ok", "", slice_, arcs, candidates, usable, checks)
    logger.info("slice done", extra={"z1": z1, "area": result.area, "arcs": len(arcs)})
    return result


def acc_grid(p: AccParameters, config: RunConfig) -> List[float]:
    """Leader speeds to slice at: the explicit list, or an even grid over the
    speed domain."""
    if config.z1 is not None:
        return [float(z) for z in config.z1]
    return np.linspace(0.0, acc_speed_bound(p), config.grid).tolist()


@dataclasses.dataclass(eq=False)
class PipelineResult:
    """Slices for a grid of leader speeds."""

    params: AccParameters
    config: RunConfig
    slices: List[SliceResult]

    @property
    def failed(self) -> List[SliceResult]:
        """Slices that could not be built."""
        return [res for res in self.slices if res.status != "ok"]

    def manifest(self) -> Dict[str, Any]:
        """Deterministic run summary."""
        return {
            "system": "acc",
            "params": self.params.to_dict(),
            "speed_bound": acc_speed_bound(self.params),
            "config": self.config.to_dict(),
            "assumptions": [CLOSURE_ASSUMPTION],
            "slices": [res.to_dict() for res in self.slices],
        }


def acc_pipeline(
    p: Optional[AccParameters] = None, config: Optional[RunConfig] = None
) -> PipelineResult:
    """Slice the admissible set over a grid of leader speeds."""
    p = p or AccParameters()
    config = config or RunConfig()
    sys = acc_system(p)
    grid = acc_grid(p, config)
    slices = parallel_map(lambda z1: acc_slice(p, z1, config, sys), grid, config.threads)
    logger.info(
        "pipeline done",
        extra={"slices": len(slices), "failed": sum(res.status != "ok" for res in slices)},
    )
    return PipelineResult(p, config, slices)


def acc_family(
    p: Optional[AccParameters] = None,
    grid: Sequence[float] = (),
    settings: Optional[BarrierSettings] = None,
    threads: Optional[int] = None,
) -> List[Tuple[float, List[BarrierTrajectory]]]:
    """Barrier trajectories of both branches for each leader speed in `grid`."""
    p = p or AccParameters()
    settings = settings or BarrierSettings()
    sys = acc_system(p)

    def one(z1: float) -> Tuple[float, List[BarrierTrajectory]]:
        accepted = filter_candidates(sys, _candidates(p, sys, z1), None, settings).accepted
        return float(z1), [trace_acc_barrier(sys, tp, settings) for tp in accepted]

    return parallel_map(one, list(grid), threads)
