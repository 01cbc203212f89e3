"""
Barrier tracing. From an ultimate tangentiality point ``z`` the coupled
state/adjoint system

    dx/dt = f(x, u*, d*),   dlam/dt = -(df/dx)^T lam,   lam(0) = Dg_i(z)

is integrated backward in time, with ``(u*, d*)`` the saddle point of the
Hamiltonian ``lam^T f``. Along the solution the Hamiltonian stays zero.

For input-affine systems the inputs are bang-bang; they are held constant
between zero crossings of the switching functions, which are located as
integrator events. A switching function that vanishes where a piece starts
is resolved by looking a short distance ahead along the backward flow.

Traces may instead be parameterized by a state coordinate ``x_k`` that is
monotone along the trajectory, carrying time as an extra state.
"""

import dataclasses
import logging
from enum import IntEnum
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import optimize

from .config import BarrierSettings, parallel_map
from .exceptions import DenominatorSingular, HamiltonianDrift
from .ode import Direction, EventSpec, InputSchedule, TerminationKind, Trajectory, integrate
from .saddle import bang_control, bang_disturbance, saddle_hamiltonian, switching_functions
from .sysmodel import (
    ControlSystem,
    constraint_gradient,
    constraint_values,
    eval_dynamics,
    eval_state_jacobian,
)
from .tangency import TangencyPoint

logger = logging.getLogger(__name__)

# Lookahead distances used to resolve vanishing switching functions.
_LOOKAHEAD = (1e-7, 1e-5, 1e-3)
# States within this distance of a domain face count as on it.
_FACE_TOL = 1e-9


class BarrierTermination(IntEnum):
    """Why a barrier trace stopped."""

    #: Integration domain exhausted: horizon, coordinate interval, a domain
    #: face or the probe length
    DOMAIN_END = 0
    #: Some constraint became violated, see ``exit_index``
    CONSTRAINT_EXIT = 1
    SWITCH_LIMIT = 2
    STEP_FAILURE = 3


@dataclasses.dataclass(eq=False)
class BarrierTrajectory:
    """A traced barrier trajectory, ordered from the tangency point backward.

    Attributes:
        origin (TangencyPoint): The tangency point the trace started from.
        s (numpy.ndarray): Integration variable; time offsets (all <= 0) for
            time parameterized traces, ``x_k`` values otherwise.
        t (numpy.ndarray): Time offsets from the tangency point.
        x (numpy.ndarray): States ``(N, n)``.
        lam (numpy.ndarray): Adjoints ``(N, n)``.
        u (numpy.ndarray): Applied controls ``(N, m)``.
        d (numpy.ndarray): Applied disturbances ``(N, w)``.
        hamiltonian (numpy.ndarray): ``|lam^T f|`` per sample.
        termination (BarrierTermination): Why the trace stopped.
        switching_times (list[float]): Time offsets of input switches.
        coordinate (int, optional): 0-based reparameterizing coordinate.
        exit_index (int, optional): Violated constraint for
            :attr:`BarrierTermination.CONSTRAINT_EXIT`.
        exit_face (tuple, optional): ``(coordinate, "lower" | "upper")`` of a
            domain face the trace stopped on.
    """

    origin: TangencyPoint
    s: np.ndarray
    t: np.ndarray
    x: np.ndarray
    lam: np.ndarray
    u: np.ndarray
    d: np.ndarray
    hamiltonian: np.ndarray
    termination: BarrierTermination
    switching_times: List[float] = dataclasses.field(default_factory=list)
    coordinate: Optional[int] = None
    exit_index: Optional[int] = None
    exit_face: Optional[Tuple[int, str]] = None
    pieces: List["TracePiece"] = dataclasses.field(default_factory=list, repr=False)

    def __len__(self) -> int:
        return self.s.size

    @property
    def parameterization(self) -> str:
        """``"time"`` or ``"x<k>"`` with 1-based ``k``."""
        return "time" if self.coordinate is None else f"x{self.coordinate + 1}"

    @property
    def max_hamiltonian(self) -> float:
        """Largest Hamiltonian residual along the trace."""
        return float(np.max(self.hamiltonian))

    @property
    def endpoint(self) -> np.ndarray:
        """The state where the trace stopped."""
        return self.x[-1]

    @property
    def arclength(self) -> float:
        """Polyline length of the sampled states."""
        return float(np.sum(np.linalg.norm(np.diff(self.x, axis=0), axis=1)))

    def schedule(self) -> InputSchedule:
        """Applied inputs as a forward-time schedule ending at offset 0."""
        if len(self.pieces) == 0 or self.t[-1] >= 0:
            return InputSchedule.constant(self.u[0], self.d[0], -1.0, 0.0)
        spans = []
        stop = 0.0
        for piece in self.pieces:
            if piece.t_end < stop:
                spans.append((piece.t_end, piece.u, piece.d))
                stop = piece.t_end
        spans.reverse()
        return InputSchedule(
            [span[0] for span in spans] + [0.0],
            [span[1] for span in spans],
            [span[2] for span in spans],
        )

    def state_at_time(self, t: float) -> np.ndarray:
        """Dense ``(x, lam)`` at time offset `t` of a time parameterized trace."""
        if self.coordinate is not None:
            raise ValueError("state_at_time needs a time parameterized trace")
        n = self.x.shape[1]
        for piece in self.pieces:
            if piece.dense.t[0] <= -t <= piece.dense.t[-1]:
                return piece.dense(-t)[: 2 * n]
        raise ValueError(f"time offset {t} outside the trace")

    def state_at_coordinate(self, k: int, value: float) -> np.ndarray:
        """Dense ``(x, lam)`` where coordinate `k` equals `value`.

        Raises:
            ValueError: `value` is never attained.
        """
        n = self.x.shape[1]
        for piece in self.pieces:
            coord = piece.dense.x[:, k]
            for j in range(coord.size - 1):
                a, b = coord[j] - value, coord[j + 1] - value
                if a == 0:
                    return piece.dense.x[j, : 2 * n].copy()
                if a * b < 0 or b == 0:
                    lo, hi = piece.dense.t[j], piece.dense.t[j + 1]
                    root = optimize.brentq(
                        lambda r: piece.dense(r)[k] - value, lo, hi, xtol=1e-14, rtol=1e-15
                    )
                    return piece.dense(root)[: 2 * n]
        raise ValueError(f"coordinate {k} never reaches {value}")


@dataclasses.dataclass(eq=False)
class TracePiece:
    """One stretch of a trace with constant inputs."""

    #: Augmented solution over the integration variable
    dense: Trajectory
    u: np.ndarray
    d: np.ndarray
    #: Time offset where the piece ends (its earliest time)
    t_end: float


def resolve_inputs(
    sys: ControlSystem, x: np.ndarray, lam: np.ndarray, settings: BarrierSettings
) -> Tuple[np.ndarray, np.ndarray]:
    """Saddle inputs for the next piece of a backward trace.

    Switching functions inside the resolution band take the sign they will
    have a short distance further along the backward flow.
    """
    result = saddle_hamiltonian(sys, x, lam, settings.switch_tol)
    if sys.affine is None:
        return result.u_star, result.d_star
    band = max(settings.switch_tol, 10 * settings.integrator.event_tol)
    su, sd = switching_functions(sys, x, lam)
    pending_u = np.abs(su) <= band
    pending_d = np.abs(sd) <= band
    if not (pending_u.any() or pending_d.any()):
        return (
            bang_control(sys.control_box, su, band),
            bang_disturbance(sys.disturbance_box, sd, band),
        )
    u = bang_control(sys.control_box, su, band)
    d = bang_disturbance(sys.disturbance_box, sd, band)
    for _ in range(3):
        dx = -eval_dynamics(sys, x, u, d)
        dlam = eval_state_jacobian(sys, x, u, d).T @ lam
        for delta in _LOOKAHEAD:
            su_ahead, sd_ahead = switching_functions(sys, x + delta * dx, lam + delta * dlam)
            if (np.abs(su_ahead[pending_u]) > band).all() and (
                np.abs(sd_ahead[pending_d]) > band
            ).all():
                break
        u_next = np.where(pending_u, bang_control(sys.control_box, su_ahead, band), u)
        d_next = np.where(pending_d, bang_disturbance(sys.disturbance_box, sd_ahead, band), d)
        if np.array_equal(u_next, u) and np.array_equal(d_next, d):
            break
        u, d = u_next, d_next
    return u, d


class _Tracer:
    """Backward tracing engine shared by both parameterizations."""

    def __init__(
        self,
        sys: ControlSystem,
        tp: TangencyPoint,
        settings: BarrierSettings,
        lam0: np.ndarray,
        coordinate: Optional[int],
        max_arclength: Optional[float],
        stop_on_constraint: bool,
    ) -> None:
        self.sys = sys
        self.tp = tp
        self.settings = settings
        self.lam0 = lam0
        self.coordinate = coordinate
        self.max_arclength = max_arclength
        self.stop_on_constraint = stop_on_constraint
        self.n = sys.n

    def inputs(self, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return resolve_inputs(self.sys, y[: self.n], y[self.n : 2 * self.n], self.settings)

    def forward(self, y: np.ndarray, u, d) -> np.ndarray:
        """Forward-time derivative of ``(x, lam, 1)``."""
        n = self.n
        x = y[:n]
        lam = y[n : 2 * n]
        if u is None:
            u, d = resolve_inputs(self.sys, x, lam, self.settings)
        xdot = eval_dynamics(self.sys, x, u, d)
        lamdot = -eval_state_jacobian(self.sys, x, u, d).T @ lam
        return np.concatenate([xdot, lamdot, [1.0]])

    def make_field(self, u, d, sign: float):
        n = self.n
        k = self.coordinate
        if k is None:

            def field(_s, y):
                deriv = -self.forward(y, u, d)
                deriv[2 * n] = np.linalg.norm(deriv[:n])
                return deriv

        else:

            def field(_s, y):
                deriv = self.forward(y, u, d)
                return sign * deriv / deriv[k]

        return field

    def events(self, u, d, sign: float) -> List[EventSpec]:
        sys = self.sys
        n = self.n
        events: List[EventSpec] = []
        if sys.affine is not None:
            for j in range(sys.m):
                events.append(
                    EventSpec(
                        f"switch:u{j + 1}",
                        lambda _s, y, j=j: float(
                            switching_functions(sys, y[:n], y[n : 2 * n])[0][j]
                        ),
                    )
                )
            for j in range(sys.w):
                events.append(
                    EventSpec(
                        f"switch:d{j + 1}",
                        lambda _s, y, j=j: float(
                            switching_functions(sys, y[:n], y[n : 2 * n])[1][j]
                        ),
                    )
                )
        if self.stop_on_constraint:
            for j in range(1, sys.p + 1):
                con = sys.constraint(j)
                events.append(
                    EventSpec(
                        f"constraint:{j}",
                        lambda _s, y, con=con: float(con.func(y[:n])) - self.settings.g_tol,
                        Direction.RISING,
                    )
                )
        for c in range(n):
            if c == self.coordinate:
                continue
            if np.isfinite(sys.domain.upper[c]):
                events.append(
                    EventSpec(
                        f"domain:{c}:upper",
                        lambda _s, y, c=c: y[c] - sys.domain.upper[c],
                        Direction.RISING,
                    )
                )
            if np.isfinite(sys.domain.lower[c]):
                events.append(
                    EventSpec(
                        f"domain:{c}:lower",
                        lambda _s, y, c=c: sys.domain.lower[c] - y[c],
                        Direction.RISING,
                    )
                )
        if self.coordinate is None:
            if self.max_arclength is not None:
                limit = self.max_arclength
                events.append(
                    EventSpec("arclength", lambda _s, y: y[2 * n] - limit, Direction.RISING)
                )
        else:
            k = self.coordinate
            horizon = self.settings.horizon
            events.append(EventSpec("horizon", lambda _s, y: -y[2 * n] - horizon, Direction.RISING))
            denom = self.settings.denom_tol
            events.append(
                EventSpec(
                    "denominator",
                    lambda _s, y: abs(eval_dynamics(sys, y[:n], u, d)[k]) - denom,
                    Direction.FALLING,
                )
            )
        return events

    def leaving_face(self, y: np.ndarray, u, d) -> Optional[Tuple[int, str]]:
        """Domain face the next piece would immediately cross, if any."""
        x = y[: self.n]
        motion = -eval_dynamics(self.sys, x, u, d)
        if self.coordinate is not None:
            motion = motion / abs(motion[self.coordinate])
        lower, upper = self.sys.domain.lower, self.sys.domain.upper
        for c in range(self.n):
            if c == self.coordinate:
                continue
            if x[c] <= lower[c] + _FACE_TOL and motion[c] < 0:
                return c, "lower"
            if x[c] >= upper[c] - _FACE_TOL and motion[c] > 0:
                return c, "upper"
        return None

    def record(self, y: np.ndarray, s: float, u, d):
        n = self.n
        x = y[:n]
        lam = y[n : 2 * n]
        if u is None:
            u, d = resolve_inputs(self.sys, x, lam, self.settings)
        if self.coordinate is None:
            t = -s
            svalue = -s
        else:
            t = y[2 * n]
            svalue = x[self.coordinate]
        ham = abs(float(lam @ eval_dynamics(self.sys, x, u, d)))
        return svalue, t, x.copy(), lam.copy(), np.array(u, float), np.array(d, float), ham

    def run(self) -> BarrierTrajectory:
        sys = self.sys
        n = self.n
        settings = self.settings
        pointwise = sys.affine is None
        y = np.concatenate([self.tp.z, self.lam0, [0.0]])
        rho = 0.0
        records: list = []
        pieces: List[TracePiece] = []
        switches: List[float] = []
        termination = BarrierTermination.DOMAIN_END
        exit_index = None
        exit_face = None

        while True:
            u, d = self.inputs(y)
            if not records:
                records.append(self.record(y, rho, u, d))
            sign = 1.0
            if self.coordinate is None:
                span_end = settings.horizon
            else:
                k = self.coordinate
                fk = eval_dynamics(sys, y[:n], u, d)[k]
                if abs(fk) < settings.denom_tol:
                    raise DenominatorSingular(
                        f"coordinate x{k + 1} is stationary at {y[:n].tolist()}"
                    )
                sign = -float(np.sign(fk))
                bound = sys.domain.upper[k] if sign > 0 else sys.domain.lower[k]
                if not np.isfinite(bound):
                    raise ValueError("coordinate parameterization needs a finite domain bound")
                span_end = rho + abs(bound - y[k])
                if span_end - rho <= _FACE_TOL:
                    exit_face = (k, "upper" if sign > 0 else "lower")
                    break
            face = self.leaving_face(y, u, d)
            if face is not None:
                exit_face = face
                break

            piece_u, piece_d = (None, None) if pointwise else (u, d)
            dense = integrate(
                self.make_field(piece_u, piece_d, sign),
                y,
                (rho, span_end),
                settings.integrator,
                () if pointwise else self.events(u, d, sign),
            )
            for idx in range(1, len(dense)):
                records.append(self.record(dense.x[idx], dense.t[idx], piece_u, piece_d))
            y = dense.x_final
            rho = dense.t_final
            pieces.append(TracePiece(dense, np.array(u), np.array(d), records[-1][1]))

            kind = dense.termination.kind
            if kind == TerminationKind.SPAN_END:
                break
            if kind == TerminationKind.STEP_FAILURE:
                termination = BarrierTermination.STEP_FAILURE
                break
            name = dense.termination.event or ""
            if name.startswith("switch:"):
                switches.append(records[-1][1])
                if len(switches) > settings.max_switches:
                    termination = BarrierTermination.SWITCH_LIMIT
                    break
                continue
            if name.startswith("constraint:"):
                termination = BarrierTermination.CONSTRAINT_EXIT
                exit_index = int(name.split(":")[1])
                break
            if name.startswith("domain:"):
                _, coord, side = name.split(":")
                exit_face = (int(coord), side)
                break
            if name == "denominator":
                raise DenominatorSingular(
                    f"coordinate x{self.coordinate + 1} became stationary at {y[:n].tolist()}"
                )
            break

        columns = list(zip(*records))
        traj = BarrierTrajectory(
            origin=self.tp,
            s=np.array(columns[0], float),
            t=np.array(columns[1], float),
            x=np.array(columns[2]),
            lam=np.array(columns[3]),
            u=np.array(columns[4]),
            d=np.array(columns[5]),
            hamiltonian=np.array(columns[6], float),
            termination=termination,
            switching_times=switches,
            coordinate=self.coordinate,
            exit_index=exit_index,
            exit_face=exit_face,
            pieces=pieces,
        )
        logger.debug(
            "barrier traced",
            extra={
                "origin": self.tp.z.tolist(),
                "samples": len(traj),
                "termination": traj.termination.name,
                "parameterization": traj.parameterization,
            },
        )
        return traj


def _initial_adjoint(sys: ControlSystem, tp: TangencyPoint, lam_final) -> np.ndarray:
    if lam_final is None:
        lam0 = constraint_gradient(sys, tp.active_index, tp.z)
    else:
        lam0 = np.array(lam_final, dtype=float).reshape(sys.n)
    if not np.any(lam0):
        raise ValueError("terminal adjoint must be nonzero")
    return lam0


def _check_drift(traj: BarrierTrajectory, settings: BarrierSettings) -> None:
    if traj.max_hamiltonian > settings.h_tol:
        raise HamiltonianDrift(
            f"Hamiltonian residual {traj.max_hamiltonian:.3e} exceeds {settings.h_tol:.1e}",
            residual=traj.max_hamiltonian,
        )


def trace_barrier(
    sys: ControlSystem,
    tp: TangencyPoint,
    settings: Optional[BarrierSettings] = None,
    *,
    lam_final: Optional[Sequence[float]] = None,
    max_arclength: Optional[float] = None,
    stop_on_constraint: bool = True,
    check_hamiltonian: bool = True,
) -> BarrierTrajectory:
    """Trace the barrier trajectory ending at `tp` backward in time.

    Arguments:
        sys (ControlSystem): The system.
        tp (TangencyPoint): Where the trajectory touches the constraint set.
        settings (BarrierSettings, optional): Tracing settings.
        lam_final (Sequence[float], optional): Terminal adjoint, defaults to
            ``Dg_i(z)``.
        max_arclength (float, optional): Stop after this much state-space
            arclength.
        stop_on_constraint (bool): Stop where a constraint becomes violated.
        check_hamiltonian (bool): Raise when the Hamiltonian drifts.

    Raises:
        ValueError: The terminal adjoint is zero.
        HamiltonianDrift: The Hamiltonian residual exceeded ``h_tol``.
    """
    settings = settings or BarrierSettings()
    lam0 = _initial_adjoint(sys, tp, lam_final)
    traj = _Tracer(sys, tp, settings, lam0, None, max_arclength, stop_on_constraint).run()
    if check_hamiltonian:
        _check_drift(traj, settings)
    return traj


def trace_barrier_reparam(
    sys: ControlSystem,
    tp: TangencyPoint,
    settings: Optional[BarrierSettings] = None,
    coordinate: int = 0,
    *,
    fallback: bool = False,
    lam_final: Optional[Sequence[float]] = None,
) -> BarrierTrajectory:
    """Trace the barrier ending at `tp` with state coordinate `coordinate`
    (0-based) as the independent variable, running to the end of that
    coordinate's domain interval.

    Raises:
        DenominatorSingular: The coordinate is stationary along the trace and
            `fallback` is False. With `fallback` a time parameterized trace is
            returned instead.
    """
    settings = settings or BarrierSettings()
    if not 0 <= coordinate < sys.n:
        raise ValueError(f"coordinate {coordinate} outside the state")
    lam0 = _initial_adjoint(sys, tp, lam_final)
    try:
        traj = _Tracer(sys, tp, settings, lam0, coordinate, None, True).run()
    except DenominatorSingular as exc:
        if not fallback:
            raise
        logger.warning(
            "falling back to time parameterization: %s", exc, extra={"origin": tp.z.tolist()}
        )
        return trace_barrier(sys, tp, settings, lam_final=lam_final)
    _check_drift(traj, settings)
    return traj


def trace_family(
    sys: ControlSystem,
    points: Sequence[TangencyPoint],
    settings: Optional[BarrierSettings] = None,
    coordinate: Optional[int] = None,
    threads: Optional[int] = None,
) -> List[BarrierTrajectory]:
    """Trace one barrier per tangency point, preserving input order."""
    settings = settings or BarrierSettings()
    if coordinate is None:
        return parallel_map(lambda tp: trace_barrier(sys, tp, settings), points, threads)
    return parallel_map(
        lambda tp: trace_barrier_reparam(sys, tp, settings, coordinate, fallback=True),
        points,
        threads,
    )


def violates_constraints(sys: ControlSystem, traj: BarrierTrajectory, g_tol: float) -> bool:
    """True when some sample leaves the constraint set."""
    return any(float(np.max(constraint_values(sys, x))) > g_tol for x in traj.x)
