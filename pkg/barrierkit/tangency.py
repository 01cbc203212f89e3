"""
Search for ultimate tangentiality points: states ``z`` on a constraint
boundary ``g_i(z) = 0`` where ``min_u max_d L_f g_i(z, u, d) = 0``. Such points
are where barrier trajectories touch the constraint set.
"""

import dataclasses
import logging
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import optimize

from .config import BarrierSettings, parallel_map
from .exceptions import BarrierKitException, Degenerate, NoRoot
from .saddle import saddle_lie
from .sysmodel import (
    ActiveSet,
    Box,
    ControlSystem,
    as_vector,
    constraint_gradient,
    constraint_values,
    in_domain,
)

logger = logging.getLogger(__name__)

#: Residual bound on both tangency equations
TANGENCY_TOL = 1e-8
#: Samples along the scanned coordinate
SCAN_POINTS = 400
# Fraction of the domain diameter used as default probe length.
_PROBE_FRACTION = 0.01


@dataclasses.dataclass(frozen=True, eq=False)
class TangencyPoint:
    """An ultimate tangentiality point with its saddle inputs."""

    z: np.ndarray
    #: 1-based index of the constraint touched
    active_index: int
    u_star: np.ndarray
    d_star: np.ndarray
    residual_g: float
    residual_lie: float
    #: Values of the free coordinates this point was found for
    parameter: Tuple[float, ...] = ()

    @property
    def param(self) -> float:
        """First parameter value, the slice label for single-parameter
        families."""
        return self.parameter[0] if self.parameter else float("nan")

    def to_dict(self) -> dict:
        """JSON-compatible form."""
        return {
            "z": self.z.tolist(),
            "i_star": self.active_index,
            "u_star": self.u_star.tolist(),
            "d_star": self.d_star.tolist(),
            "residual_g": self.residual_g,
            "residual_lie": self.residual_lie,
            "parameter": list(self.parameter),
        }


def make_tangency_point(
    sys: ControlSystem, i: int, z, parameter: Sequence[float] = (), tol: float = TANGENCY_TOL
) -> TangencyPoint:
    """Evaluate the saddle inputs and residuals at a known root `z`."""
    z = as_vector(z, sys.n, "state")
    result = saddle_lie(sys, z, ActiveSet((i,), tol))
    return TangencyPoint(
        z=z,
        active_index=i,
        u_star=result.u_star,
        d_star=result.d_star,
        residual_g=float(sys.constraint(i).func(z)),
        residual_lie=result.value,
        parameter=tuple(float(p) for p in parameter),
    )


@dataclasses.dataclass(eq=False)
class TangencyScan:
    """Roots found for one parameter value.

    `failure` holds the :class:`NoRoot` or :class:`Degenerate` exception
    explaining a missing or rejected root, if any.
    """

    parameter: Tuple[float, ...]
    points: List[TangencyPoint]
    failure: Optional[BarrierKitException] = None

    def to_dict(self) -> dict:
        """JSON-compatible form."""
        failure = None
        if self.failure is not None:
            failure = f"{type(self.failure).__name__}: {self.failure}"
        return {
            "parameter": list(self.parameter),
            "points": [tp.to_dict() for tp in self.points],
            "failure": failure,
        }


class _Scanner:
    def __init__(
        self,
        sys: ControlSystem,
        i: int,
        parameter: np.ndarray,
        free: Tuple[int, ...],
        remaining: Sequence[int],
        box: Box,
        tol: float,
    ) -> None:
        self.sys = sys
        self.i = i
        self.tol = tol
        self.box = box
        self.base = box.midpoint()
        self.base[list(free)] = parameter
        grad = np.abs(constraint_gradient(sys, i, self.base))
        # Solve g_i = 0 for the remaining coordinate it depends on most.
        self.solve, self.scan = sorted(remaining, key=lambda k: -grad[k])
        self.con = sys.constraint(i)

    def complete(self, value: float) -> Optional[np.ndarray]:
        """State with the scanned coordinate at `value` on ``g_i = 0``."""
        z = self.base.copy()
        z[self.scan] = value
        lo, hi = self.box.lower[self.solve], self.box.upper[self.solve]

        def gfun(val):
            trial = z.copy()
            trial[self.solve] = val
            return float(self.con.func(trial))

        glo, ghi = gfun(lo), gfun(hi)
        if glo == 0:
            z[self.solve] = lo
        elif ghi == 0:
            z[self.solve] = hi
        elif glo * ghi > 0:
            return None
        else:
            z[self.solve] = optimize.brentq(gfun, lo, hi, xtol=1e-14, rtol=1e-15)
        return z

    def lie(self, z: np.ndarray) -> float:
        return saddle_lie(self.sys, z, ActiveSet((self.i,), self.tol)).value

    def scan_value(self, value: float) -> float:
        z = self.complete(value)
        return float("nan") if z is None else self.lie(z)

    def residual(self, z: np.ndarray) -> np.ndarray:
        return np.array([float(self.con.func(z)), self.lie(z)])

    def polish(self, z: np.ndarray) -> np.ndarray:
        """Safeguarded Newton iteration on ``(g_i, min max L_f g_i) = 0``."""
        coords = [self.scan, self.solve]
        for _ in range(30):
            res = self.residual(z)
            if np.max(np.abs(res)) <= 1e-13:
                break
            jac = np.empty((2, 2))
            for col, k in enumerate(coords):
                step = 1e-7 * max(1.0, abs(z[k]))
                zp = z.copy()
                zm = z.copy()
                zp[k] += step
                zm[k] -= step
                jac[:, col] = (self.residual(zp) - self.residual(zm)) / (2 * step)
            if abs(np.linalg.det(jac)) <= 1e-12 * max(np.sum(jac**2), 1e-300):
                raise Degenerate(f"singular tangency Jacobian at {z.tolist()}")
            delta = np.linalg.solve(jac, -res)
            scale = 1.0
            while scale > 1e-6:
                trial = z.copy()
                trial[coords] += scale * delta
                if np.linalg.norm(self.residual(trial)) < np.linalg.norm(res):
                    z = trial
                    break
                scale /= 2
            else:
                break
        return z

    def roots(self, scan_points: int) -> List[np.ndarray]:
        lo, hi = self.box.lower[self.scan], self.box.upper[self.scan]
        grid = np.linspace(lo, hi, scan_points)
        values = np.array([self.scan_value(val) for val in grid])
        found = []
        for k, val in enumerate(values):
            if val == 0:
                found.append(grid[k])
            elif k + 1 < len(grid) and val * values[k + 1] < 0:
                try:
                    found.append(optimize.brentq(self.scan_value, grid[k], grid[k + 1], xtol=1e-13))
                except ValueError:
                    logger.debug("bracket lost during refinement", extra={"at": float(grid[k])})
        return [z for z in (self.complete(val) for val in found) if z is not None]


def _scan_parameter(
    sys: ControlSystem,
    i: int,
    parameter: np.ndarray,
    free: Tuple[int, ...],
    remaining: Sequence[int],
    box: Box,
    scan_points: int,
    tol: float,
) -> TangencyScan:
    scanner = _Scanner(sys, i, parameter, free, remaining, box, tol)
    label = tuple(float(p) for p in parameter)
    points: List[TangencyPoint] = []
    failure: Optional[BarrierKitException] = None
    for z in scanner.roots(scan_points):
        try:
            z = scanner.polish(z)
        except Degenerate as exc:
            failure = exc
            continue
        tp = make_tangency_point(sys, i, z, label, tol)
        if abs(tp.residual_g) > tol or abs(tp.residual_lie) > tol:
            failure = Degenerate(f"tangency residuals above tolerance at {z.tolist()}")
            continue
        scale = max(1.0, np.linalg.norm(tp.z))
        if any(np.linalg.norm(tp.z - other.z) <= 1e-9 * scale for other in points):
            continue
        points.append(tp)
    if not points and failure is None:
        failure = NoRoot(f"no tangency point of g{i} for parameter {list(label)}")
    logger.debug(
        "tangency scan done",
        extra={"constraint": i, "parameter": list(label), "roots": len(points)},
    )
    return TangencyScan(label, points, failure)


def find_tangency_points(
    sys: ControlSystem,
    i: int,
    grid: Iterable,
    free_coords: Sequence[int],
    *,
    search_box: Optional[Box] = None,
    scan_points: int = SCAN_POINTS,
    tol: float = TANGENCY_TOL,
    threads: Optional[int] = None,
) -> List[TangencyScan]:
    """Find the tangency points of ``g_i`` for each parameter value.

    The `free_coords` are fixed to each grid value; the two remaining
    coordinates are found by scanning one of them across `search_box` (the
    system domain by default), solving ``g_i = 0`` for the other, and
    polishing bracketed roots with Newton's method.

    Returns:
        One :class:`TangencyScan` per grid value, in grid order. Missing roots
        are reported per value, never raised.
    """
    sys.constraint(i)
    free = tuple(int(k) for k in free_coords)
    remaining = [k for k in range(sys.n) if k not in free]
    if len(remaining) != 2 or len(set(free)) != len(free):
        raise ValueError("free coordinates must leave exactly two coordinates to solve for")
    box = search_box or sys.domain
    if not (np.isfinite(box.lower[remaining]).all() and np.isfinite(box.upper[remaining]).all()):
        raise ValueError("search box must be finite in the solved coordinates")
    values = [as_vector(np.atleast_1d(val), len(free), "grid value") for val in grid]
    if not values:
        raise ValueError("grid must be nonempty")
    return parallel_map(
        lambda val: _scan_parameter(sys, i, val, free, remaining, box, scan_points, tol),
        values,
        threads,
    )


@dataclasses.dataclass(eq=False)
class CandidateFilter:
    """Tangency candidates split by whether they seed a genuine barrier."""

    accepted: List[TangencyPoint]
    #: ``(point, reason)`` pairs
    discarded: List[Tuple[TangencyPoint, str]]


def default_probe_length(sys: ControlSystem) -> float:
    """A small fraction of the domain diameter."""
    diameter = sys.domain.diameter()
    if not np.isfinite(diameter):
        raise ValueError("probe length must be given for unbounded domains")
    return _PROBE_FRACTION * diameter


def _precheck(sys: ControlSystem, tp: TangencyPoint, g_tol: float) -> Optional[str]:
    values = constraint_values(sys, tp.z)
    if abs(values[tp.active_index - 1]) > TANGENCY_TOL:
        return "not on the constraint boundary"
    if (values > g_tol).any():
        return "outside the constraint set"
    if not in_domain(sys, tp.z, 1e-9):
        return "outside the state domain"
    return None


def filter_candidates(
    sys: ControlSystem,
    candidates: Iterable[TangencyPoint],
    probe_len: Optional[float] = None,
    settings: Optional[BarrierSettings] = None,
) -> CandidateFilter:
    """Keep the candidates whose short backward probe stays inside the
    constraint set. Probes that leave the domain immediately have zero length
    and are accepted."""
    from . import barrier  # pylint: disable=import-outside-toplevel,cyclic-import

    settings = settings or BarrierSettings()
    probe_len = default_probe_length(sys) if probe_len is None else probe_len
    if probe_len <= 0:
        raise ValueError("probe length must be positive")
    accepted: List[TangencyPoint] = []
    discarded: List[Tuple[TangencyPoint, str]] = []
    for tp in candidates:
        reason = _precheck(sys, tp, settings.g_tol)
        if reason is None:
            try:
                probe = barrier.trace_barrier(
                    sys,
                    tp,
                    settings,
                    max_arclength=probe_len,
                    stop_on_constraint=False,
                    check_hamiltonian=False,
                )
            except BarrierKitException as exc:
                reason = f"probe failed: {exc}"
            else:
                worst = max(
                    (float(np.max(constraint_values(sys, x))) for x in probe.x[1:]),
                    default=-np.inf,
                )
                if worst > settings.g_tol:
                    reason = "probe enters the constraint complement"
                elif probe.termination == barrier.BarrierTermination.STEP_FAILURE:
                    reason = "probe integration failed"
        if reason is None:
            accepted.append(tp)
        else:
            logger.info(
                "discarding tangency candidate: %s",
                reason,
                extra={"z": tp.z.tolist(), "constraint": tp.active_index},
            )
            discarded.append((tp, reason))
    return CandidateFilter(accepted, discarded)
