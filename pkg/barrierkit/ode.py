"""
Module implementing the ODE integrators used for barrier tracing and
verification: an adaptive Dormand-Prince 5(4) pair with its 4th order
continuous extension, and a fixed step classical Runge-Kutta method with
cubic Hermite dense output.

Spans may run in either direction; a backward span is integrated forward in
the reversed variable.
"""

import bisect
import dataclasses
import logging
from enum import IntEnum
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .config import IntegratorSettings
from .exceptions import StepFailure
from .sysmodel import ControlSystem, as_vector, eval_dynamics, eval_state_jacobian

logger = logging.getLogger(__name__)

Field = Callable[[float, np.ndarray], np.ndarray]

# Dormand-Prince 5(4) tableau.
_DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0])
_DP_A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
]
_DP_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84])
_DP_E = np.array(
    [-71 / 57600, 0.0, 71 / 16695, -71 / 1920, 17253 / 339200, -22 / 525, 1 / 40]
)
# Continuous extension, y(t0 + th) = y0 + h K^T P (th, th^2, th^3, th^4).
_DP_P = np.array(
    [
        [1, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
        [0, 0, 0, 0],
        [0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
        [0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
        [0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
        [0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
        [0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
    ]
)

_SAFETY = 0.9
_MIN_FACTOR = 0.2
_MAX_FACTOR = 5.0


class Direction(IntEnum):
    """Crossing direction an event reacts to."""

    FALLING = -1
    ANY = 0
    RISING = 1


class TerminationKind(IntEnum):
    """Why an integration stopped."""

    SPAN_END = 0
    EVENT = 1
    STEP_FAILURE = 2


@dataclasses.dataclass(frozen=True)
class EventSpec:
    """A scalar event function ``e(t, y)`` watched for zero crossings.

    An event only fires once its value has been seen further than the event
    tolerance from zero, so integration may start on its zero set.
    """

    name: str
    func: Callable[[float, np.ndarray], float]
    direction: Direction = Direction.ANY
    terminal: bool = True


@dataclasses.dataclass(frozen=True)
class Termination:
    """How a trajectory ended."""

    kind: TerminationKind
    event: Optional[str] = None
    message: str = ""


class DenseSegment:
    """Interpolant over one accepted step."""

    def __init__(self, t_start: float, h: float, end: float) -> None:
        #: Start of the step
        self.t_start = t_start
        #: Signed step length
        self.h = h
        #: End of the valid range, earlier than ``t_start + h`` after truncation
        self.end = end

    def __call__(self, t: float) -> np.ndarray:
        return self.evaluate((t - self.t_start) / self.h)

    def evaluate(self, theta: float) -> np.ndarray:
        """Interpolated state at fraction `theta` of the step."""
        raise NotImplementedError()

    def truncated(self, end: float) -> "DenseSegment":
        """Copy of this segment valid only up to `end`."""
        seg = object.__new__(type(self))
        seg.__dict__.update(self.__dict__)
        seg.end = end
        return seg


class _DormandPrinceSegment(DenseSegment):
    def __init__(self, t_start: float, h: float, y0: np.ndarray, coeffs: np.ndarray) -> None:
        super().__init__(t_start, h, t_start + h)
        self.y0 = y0
        self.coeffs = coeffs

    def evaluate(self, theta: float) -> np.ndarray:
        powers = np.cumprod(np.full(4, theta))
        return self.y0 + self.h * self.coeffs @ powers


class _HermiteSegment(DenseSegment):
    def __init__(
        self,
        t_start: float,
        h: float,
        y0: np.ndarray,
        y1: np.ndarray,
        f0: np.ndarray,
        f1: np.ndarray,
    ) -> None:
        super().__init__(t_start, h, t_start + h)
        self.y0 = y0
        self.y1 = y1
        self.f0 = f0
        self.f1 = f1

    def evaluate(self, theta: float) -> np.ndarray:
        th2 = theta * theta
        th3 = th2 * theta
        return (
            (2 * th3 - 3 * th2 + 1) * self.y0
            + (th3 - 2 * th2 + theta) * self.h * self.f0
            + (-2 * th3 + 3 * th2) * self.y1
            + (th3 - th2) * self.h * self.f1
        )


@dataclasses.dataclass(eq=False)
class Trajectory:
    """Samples of an integrated solution with dense interpolation between them.

    Attributes:
        t (numpy.ndarray): Strictly monotone sample times, shape ``(N,)``.
        x (numpy.ndarray): States, shape ``(N, n)``.
        termination (Termination): Why integration stopped.
        events (list): ``(name, t)`` for every located crossing.
        segments (list): Dense interpolants, one per accepted step.
    """

    t: np.ndarray
    x: np.ndarray
    termination: Termination
    events: List[Tuple[str, float]] = dataclasses.field(default_factory=list)
    segments: List[DenseSegment] = dataclasses.field(default_factory=list, repr=False)

    def __len__(self) -> int:
        return self.t.size

    @property
    def direction(self) -> float:
        """+1 for increasing sample times, -1 for decreasing."""
        if self.t.size < 2:
            return 1.0
        return 1.0 if self.t[-1] > self.t[0] else -1.0

    @property
    def t_final(self) -> float:
        """Last sample time."""
        return float(self.t[-1])

    @property
    def x_final(self) -> np.ndarray:
        """Last sample state."""
        return self.x[-1]

    def __call__(self, t: float) -> np.ndarray:
        """Dense state at `t`, which must lie within the sampled range."""
        t = float(t)
        sign = self.direction
        lo, hi = sorted((self.t[0], self.t[-1]))
        slack = 1e-12 * max(1.0, abs(lo), abs(hi))
        if not lo - slack <= t <= hi + slack:
            raise ValueError(f"time {t} outside trajectory range [{lo}, {hi}]")
        if not self.segments:
            return self.x[0].copy()
        ends = [sign * seg.end for seg in self.segments]
        index = min(bisect.bisect_left(ends, sign * t), len(self.segments) - 1)
        return self.segments[index](t)

    @classmethod
    def concatenate(cls, parts: Sequence["Trajectory"]) -> "Trajectory":
        """Join consecutive trajectories, dropping repeated junction samples."""
        if not parts:
            raise ValueError("nothing to concatenate")
        ts = [parts[0].t]
        xs = [parts[0].x]
        for part in parts[1:]:
            ts.append(part.t[1:])
            xs.append(part.x[1:])
        return cls(
            t=np.concatenate(ts),
            x=np.concatenate(xs),
            termination=parts[-1].termination,
            events=[ev for part in parts for ev in part.events],
            segments=[seg for part in parts for seg in part.segments],
        )


def _error_norm(
    err: np.ndarray, y: np.ndarray, y_new: np.ndarray, settings: IntegratorSettings
) -> float:
    scale = settings.atol + settings.rtol * np.maximum(np.abs(y), np.abs(y_new))
    return float(np.sqrt(np.mean((err / scale) ** 2)))


def _dp_step(rhs, sigma, y, f, h, settings):
    stages = np.empty((7, y.size))
    stages[0] = f
    for i in range(1, 6):
        stages[i] = rhs(sigma + _DP_C[i] * h, y + h * (_DP_A[i] @ stages[:i]))
    y_new = y + h * (_DP_B @ stages[:6])
    stages[6] = rhs(sigma + h, y_new)
    err = _error_norm(h * (_DP_E @ stages), y, y_new, settings)
    if err == 0.0:
        factor = _MAX_FACTOR
    else:
        factor = min(_MAX_FACTOR, max(_MIN_FACTOR, _SAFETY * err ** (-1 / 5)))
    if err > 1.0:
        factor = min(1.0, factor)
    h_next = min(h * factor, settings.max_step)
    if err > 1.0:
        return None, h_next
    return (y_new, stages[6], stages.T @ _DP_P), h_next


def _rk4_step(rhs, sigma, y, f, h, _settings):
    k1 = f
    k2 = rhs(sigma + h / 2, y + h / 2 * k1)
    k3 = rhs(sigma + h / 2, y + h / 2 * k2)
    k4 = rhs(sigma + h, y + h * k3)
    y_new = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return (y_new, rhs(sigma + h, y_new), None), h


def _crossed(ev: EventSpec, ref: float, new: float) -> bool:
    """Sign change from `ref`, the last value seen outside the event
    tolerance, or zero while no such value exists yet."""
    rising = ref < 0 <= new
    falling = ref > 0 >= new
    if ev.direction == Direction.RISING:
        return rising
    if ev.direction == Direction.FALLING:
        return falling
    return rising or falling


def _reference(value: float, ref: float, tol: float) -> float:
    return value if abs(value) > tol else ref


def _locate(func: Callable[[float], float], a: float, b: float, fa: float, tol: float) -> float:
    """Bisect for a zero of `func` between `a` (value `fa`) and `b`."""
    for _ in range(200):
        mid = 0.5 * (a + b)
        fm = func(mid)
        if abs(fm) <= tol:
            return mid
        if (fm < 0) == (fa < 0):
            a, fa = mid, fm
        else:
            b = mid
        if abs(b - a) <= 1e-15 * max(1.0, abs(a)):
            break
    return b


def integrate(
    field: Field,
    x0: Sequence[float],
    t_span: Tuple[float, float],
    settings: Optional[IntegratorSettings] = None,
    events: Sequence[EventSpec] = (),
) -> Trajectory:
    """Integrate ``dy/dt = field(t, y)`` over `t_span`.

    Terminal events stop integration at the located crossing; non-terminal
    events are only recorded. A step size underflow or exhausted step budget
    ends the trajectory with a :attr:`TerminationKind.STEP_FAILURE`
    termination instead of raising, so callers keep the partial solution.

    Arguments:
        field: Right hand side.
        x0: Initial state.
        t_span: ``(t0, t1)`` with ``t1 != t0``; ``t1 < t0`` integrates backward.
        settings (IntegratorSettings, optional): Tolerances and step bounds.
        events (Sequence[EventSpec]): Event functions to watch.

    Returns:
        The sampled :class:`Trajectory`.
    """
    settings = settings or IntegratorSettings()
    t0, t1 = float(t_span[0]), float(t_span[1])
    if not np.isfinite(t0) or not np.isfinite(t1) or t0 == t1:
        raise ValueError(f"invalid integration span {t_span}")
    sign = 1.0 if t1 > t0 else -1.0
    length = abs(t1 - t0)

    def rhs(sigma: float, y: np.ndarray) -> np.ndarray:
        return sign * np.asarray(field(t0 + sign * sigma, y), dtype=float)

    def time(sigma: float) -> float:
        return t0 + sign * sigma

    if settings.method == "rk45":
        stepper = _dp_step
        h = min(settings.first_step, settings.max_step, length)
    else:
        stepper = _rk4_step
        h = min(settings.fixed_step, settings.max_step, length)

    y = as_vector(x0)
    f = rhs(0.0, y)
    sigma = 0.0
    ts = [t0]
    xs = [y]
    segments: List[DenseSegment] = []
    located: List[Tuple[str, float]] = []
    ref = [_reference(float(ev.func(t0, y)), 0.0, settings.event_tol) for ev in events]
    termination = Termination(TerminationKind.SPAN_END)
    steps = 0

    while sigma < length:
        if steps >= settings.max_steps:
            termination = Termination(TerminationKind.STEP_FAILURE, message="step budget exhausted")
            break
        h = min(h, length - sigma)
        result, h_next = stepper(rhs, sigma, y, f, h, settings)
        if result is None:
            h = h_next
            if h < settings.min_step:
                termination = Termination(
                    TerminationKind.STEP_FAILURE, message="step size underflow"
                )
                break
            continue
        steps += 1
        y_new, f_new, coeffs = result
        sigma_new = length if length - (sigma + h) <= 1e-14 * max(1.0, length) else sigma + h
        if coeffs is not None:
            segment: DenseSegment = _DormandPrinceSegment(time(sigma), sign * h, y, coeffs)
        else:
            segment = _HermiteSegment(time(sigma), sign * h, y, y_new, sign * f, sign * f_new)

        crossings = []
        values = []
        for k, ev in enumerate(events):
            value = float(ev.func(time(sigma_new), y_new))
            values.append(value)
            if _crossed(ev, ref[k], value):
                root = _locate(
                    lambda s, ev=ev: float(ev.func(time(s), segment(time(s)))),
                    sigma,
                    sigma_new,
                    ref[k],
                    settings.event_tol,
                )
                crossings.append((root, k))
        crossings.sort()

        stop = None
        for root, k in crossings:
            located.append((events[k].name, time(root)))
            if events[k].terminal:
                stop = (root, k)
                break
        if stop is not None:
            root, k = stop
            y_root = segment(time(root))
            if root > sigma:
                segments.append(segment.truncated(time(root)))
                ts.append(time(root))
                xs.append(y_root)
            termination = Termination(TerminationKind.EVENT, event=events[k].name)
            break

        segments.append(segment)
        sigma = sigma_new
        y, f = y_new, f_new
        ts.append(time(sigma))
        xs.append(y)
        ref = [_reference(v, r, settings.event_tol) for v, r in zip(values, ref)]
        h = h_next

    if termination.kind == TerminationKind.STEP_FAILURE:
        logger.warning(
            "integration stopped early: %s",
            termination.message,
            extra={"t": ts[-1], "state": np.asarray(xs[-1]).tolist()},
        )
    return Trajectory(
        t=np.array(ts),
        x=np.array(xs),
        termination=termination,
        events=located,
        segments=segments,
    )


@dataclasses.dataclass(frozen=True, eq=False)
class InputSchedule:
    """Right-continuous piecewise-constant input signal.

    Piece ``k`` holds ``(u[k], d[k])`` on ``[breaks[k], breaks[k + 1])``;
    times outside the breaks use the nearest piece.
    """

    breaks: np.ndarray
    u: np.ndarray
    d: np.ndarray

    def __post_init__(self) -> None:
        breaks = np.array(self.breaks, dtype=float).reshape(-1)
        u = np.atleast_2d(np.array(self.u, dtype=float))
        d = np.atleast_2d(np.array(self.d, dtype=float))
        if breaks.size < 2 or u.shape[0] != breaks.size - 1 or d.shape[0] != breaks.size - 1:
            raise ValueError("schedule needs one input pair per piece")
        if (np.diff(breaks) <= 0).any():
            raise ValueError("schedule breaks must increase strictly")
        object.__setattr__(self, "breaks", breaks)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "d", d)

    @classmethod
    def constant(
        cls, u: Sequence[float], d: Sequence[float], start: float, stop: float
    ) -> "InputSchedule":
        """A single piece on ``[start, stop)``."""
        return cls([start, stop], [list(u)], [list(d)])

    @property
    def start(self) -> float:
        """Start of the first piece."""
        return float(self.breaks[0])

    @property
    def stop(self) -> float:
        """End of the last piece."""
        return float(self.breaks[-1])

    def _piece(self, index: int) -> Tuple[np.ndarray, np.ndarray]:
        index = min(max(index, 0), self.u.shape[0] - 1)
        return self.u[index].copy(), self.d[index].copy()

    def __call__(self, t: float) -> Tuple[np.ndarray, np.ndarray]:
        return self._piece(int(np.searchsorted(self.breaks, t, side="right")) - 1)

    def value_before(self, t: float) -> Tuple[np.ndarray, np.ndarray]:
        """Left limit of the schedule at `t`."""
        return self._piece(int(np.searchsorted(self.breaks, t, side="left")) - 1)

    def splice(
        self, start: float, stop: float, u: Sequence[float], d: Sequence[float]
    ) -> "InputSchedule":
        """Copy with ``(u, d)`` applied on ``[start, stop)``."""
        if stop <= start:
            return self
        cuts = sorted({*self.breaks.tolist(), start, stop})
        u_new = []
        d_new = []
        for lo in cuts[:-1]:
            if start <= lo < stop:
                u_new.append(list(u))
                d_new.append(list(d))
            else:
                piece_u, piece_d = self(lo)
                u_new.append(piece_u)
                d_new.append(piece_d)
        return InputSchedule(cuts, u_new, d_new)


def _integrate_schedule(
    make_field: Callable[[np.ndarray, np.ndarray], Field],
    y0: Sequence[float],
    schedule: InputSchedule,
    t_span: Tuple[float, float],
    settings: Optional[IntegratorSettings],
    events: Sequence[EventSpec],
) -> Trajectory:
    t0, t1 = float(t_span[0]), float(t_span[1])
    if t1 <= t0:
        raise ValueError("scheduled simulation runs forward in time")
    cuts = [t0] + [b for b in schedule.breaks.tolist() if t0 < b < t1] + [t1]
    parts = []
    y = as_vector(y0)
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        u, d = schedule(lo)
        part = integrate(make_field(u, d), y, (lo, hi), settings, events)
        parts.append(part)
        if part.termination.kind != TerminationKind.SPAN_END:
            break
        y = part.x_final
    return Trajectory.concatenate(parts)


def simulate(
    sys: ControlSystem,
    x0: Sequence[float],
    schedule: InputSchedule,
    t_span: Tuple[float, float],
    settings: Optional[IntegratorSettings] = None,
    events: Sequence[EventSpec] = (),
) -> Trajectory:
    """Forward simulation under a piecewise-constant input schedule,
    restarting the integrator at every input break."""

    def make_field(u, d):
        return lambda t, x: eval_dynamics(sys, x, u, d)

    return _integrate_schedule(make_field, x0, schedule, t_span, settings, events)


@dataclasses.dataclass(eq=False)
class FundamentalMatrix:
    """Transition matrices of the variational equation along a base solution."""

    #: Augmented trajectory holding ``(x, vec(Phi(t, t0)))``
    augmented: Trajectory
    n: int

    @property
    def t0(self) -> float:
        """Start of the base solution."""
        return float(self.augmented.t[0])

    def state(self, t: float) -> np.ndarray:
        """Base state at `t`."""
        return self.augmented(t)[: self.n]

    def from_start(self, t: float) -> np.ndarray:
        """``Phi(t, t0)``."""
        return self.augmented(t)[self.n :].reshape(self.n, self.n)

    def __call__(self, t: float, s: float) -> np.ndarray:
        """``Phi(t, s) = Phi(t, t0) Phi(s, t0)^-1``."""
        phi_t = self.from_start(t)
        if s == self.t0:
            return phi_t
        return np.linalg.solve(self.from_start(s).T, phi_t.T).T


def propagate_variational(
    sys: ControlSystem,
    x0: Sequence[float],
    schedule: InputSchedule,
    t_span: Tuple[float, float],
    settings: Optional[IntegratorSettings] = None,
) -> FundamentalMatrix:
    """Integrate ``dPhi/dt = df/dx(x(t), u(t), d(t)) Phi`` with the base state.

    Raises:
        StepFailure: The underlying integration failed.
    """
    n = sys.n

    def make_field(u, d):
        def field(_t, y):
            x = y[:n]
            phi = y[n:].reshape(n, n)
            return np.concatenate(
                [eval_dynamics(sys, x, u, d), (eval_state_jacobian(sys, x, u, d) @ phi).ravel()]
            )

        return field

    y0 = np.concatenate([as_vector(x0, n, "state"), np.eye(n).ravel()])
    augmented = _integrate_schedule(make_field, y0, schedule, t_span, settings, ())
    if augmented.termination.kind == TerminationKind.STEP_FAILURE:
        raise StepFailure(
            augmented.termination.message, t=augmented.t_final, state=augmented.x_final[:n]
        )
    return FundamentalMatrix(augmented, n)
