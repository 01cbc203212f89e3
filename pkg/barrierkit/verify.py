"""
Numerical property checks for barriers, slices and the system model.

Each check returns a plain report instead of raising on a failed property so
that the command line can collect every result into one JSON document; only
integration failures the check cannot recover from propagate.
"""

import dataclasses
import logging
import math
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .assemble import AdmissibleSetSlice, Membership, contains, lift_point, signed_area
from .barrier import BarrierTrajectory, trace_barrier, trace_barrier_reparam
from .config import BarrierSettings, IntegratorSettings
from .exceptions import StepFailure
from .ode import (
    Direction,
    EventSpec,
    InputSchedule,
    TerminationKind,
    integrate,
    propagate_variational,
    simulate,
)
from .saddle import saddle_hamiltonian, switching_functions, worst_disturbance
from .sysmodel import (
    Box,
    ControlSystem,
    as_vector,
    constraint_gradient,
    constraint_values,
    eval_dynamics,
    eval_state_jacobian,
    finite_difference_jacobian,
)
from .tangency import TangencyPoint

logger = logging.getLogger(__name__)

#: Integrator settings for checks comparing nearby trajectories.
TIGHT_INTEGRATOR = IntegratorSettings(atol=1e-12, rtol=1e-12, max_step=0.25)

#: Sampled-data feedback used by :func:`simulate_admissibility`.
CONTROL_PERIOD = 0.5
LOOKAHEAD = 6.0
LOOKAHEAD_STEPS = 3
SIM_SUBSTEPS = 5
FEEDBACK_CONTROLS = 5

Feedback = Callable[[np.ndarray], Tuple[np.ndarray, np.ndarray]]


def _report_dict(report) -> dict:
    result = {}
    for field in dataclasses.fields(report):
        value = getattr(report, field.name)
        if isinstance(value, np.ndarray):
            value = value.tolist()
        elif isinstance(value, tuple):
            value = list(value)
        result[field.name] = value
    return result


@dataclasses.dataclass(frozen=True)
class HamiltonianReport:
    """Hamiltonian residual along a trajectory."""

    max_residual: float
    #: Least-squares slope of the residual against arclength
    drift_slope: float

    def to_dict(self) -> dict:
        """JSON-compatible form."""
        return _report_dict(self)


def hamiltonian_residual(sys: ControlSystem, traj: BarrierTrajectory) -> HamiltonianReport:
    """Recompute ``|lam^T f(x, u, d)|`` at every sample of `traj`."""
    residual = np.array(
        [
            abs(float(lam @ eval_dynamics(sys, x, u, d, clamp=False)))
            for x, lam, u, d in zip(traj.x, traj.lam, traj.u, traj.d)
        ]
    )
    if residual.size < 2:
        return HamiltonianReport(float(np.max(residual, initial=0.0)), 0.0)
    length = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(traj.x, axis=0), axis=1))])
    slope = 0.0
    if length[-1] > 0:
        slope = float(np.polyfit(length, residual, 1)[0])
    return HamiltonianReport(float(np.max(residual)), slope)


def flip_controls(sys: ControlSystem, traj: BarrierTrajectory) -> BarrierTrajectory:
    """Copy of `traj` with every other stored control mirrored through the
    center of the control box."""
    box = sys.control_box
    u = traj.u.copy()
    u[1::2] = box.lower + box.upper - u[1::2]
    return dataclasses.replace(traj, u=u)


def check_interiority(sys: ControlSystem, traj: BarrierTrajectory) -> float:
    """Largest constraint value along `traj` away from its origin sample."""
    if len(traj) < 2:
        return -math.inf
    return max(float(np.max(constraint_values(sys, x))) for x in traj.x[1:])


def check_saddle_consistency(
    sys: ControlSystem,
    traj: BarrierTrajectory,
    n_samples: int,
    rng: np.random.Generator,
    band: float = 1e-8,
) -> float:
    """Fraction of random samples where re-solving the Hamiltonian saddle
    reproduces the stored inputs. Components whose switching function lies
    within `band` of zero are ties and always agree."""
    if len(traj) == 0:
        return 1.0
    picks = rng.integers(0, len(traj), size=n_samples)
    agree = 0
    for k in picks:
        x, lam = traj.x[k], traj.lam[k]
        result = saddle_hamiltonian(sys, x, lam, switch_tol=band)
        if sys.affine is not None:
            su, sd = switching_functions(sys, x, lam)
            free_u = np.abs(su) <= band
            free_d = np.abs(sd) <= band
        else:
            free_u = np.zeros(sys.m, dtype=bool)
            free_d = np.zeros(sys.w, dtype=bool)
        ok_u = np.all(free_u | np.isclose(result.u_star, traj.u[k], atol=1e-9))
        ok_d = np.all(free_d | np.isclose(result.d_star, traj.d[k], atol=1e-9))
        agree += bool(ok_u and ok_d)
    return agree / n_samples


def check_saddle_inequality(
    sys: ControlSystem, tp: TangencyPoint, n_samples: int, rng: np.random.Generator
) -> float:
    """Largest violation of ``phi(u*, d) <= phi(u*, d*) <= phi(u, d*)`` over
    random box samples, with ``phi = L_f g_i`` at the tangency point."""
    lam = constraint_gradient(sys, tp.active_index, tp.z)

    def phi(u, d) -> float:
        return float(lam @ eval_dynamics(sys, tp.z, u, d))

    value = phi(tp.u_star, tp.d_star)
    worst = 0.0
    for u, d in zip(
        sys.control_box.sample(rng, n_samples), sys.disturbance_box.sample(rng, n_samples)
    ):
        worst = max(worst, phi(tp.u_star, d) - value, value - phi(u, tp.d_star))
    return worst


def _sample_states(sys: ControlSystem, rng: np.random.Generator, count: int) -> np.ndarray:
    lower = np.where(np.isfinite(sys.domain.lower), sys.domain.lower, -1.0)
    upper = np.where(np.isfinite(sys.domain.upper), sys.domain.upper, 1.0)
    return Box(lower, upper).sample(rng, count)


def check_jacobian(sys: ControlSystem, n_samples: int, rng: np.random.Generator) -> float:
    """Largest relative difference between the state Jacobian and central
    differences of the dynamics at random admissible points."""
    worst = 0.0
    states = _sample_states(sys, rng, n_samples)
    controls = sys.control_box.sample(rng, n_samples)
    disturbances = sys.disturbance_box.sample(rng, n_samples)
    for x, u, d in zip(states, controls, disturbances):
        analytic = eval_state_jacobian(sys, x, u, d)
        numeric = finite_difference_jacobian(lambda y: eval_dynamics(sys, y, u, d), x)
        scale = max(1.0, float(np.max(np.abs(analytic))))
        worst = max(worst, float(np.max(np.abs(analytic - numeric))) / scale)
    return worst


@dataclasses.dataclass(frozen=True)
class NeedleSpec:
    """A needle perturbation: the replacement inputs ``(v_u, v_d)`` act on
    ``[tau - l eps, tau)`` and the initial state moves by ``eps h``."""

    v_u: np.ndarray
    v_d: np.ndarray
    tau: float
    l: float
    h: np.ndarray
    eps: Tuple[float, ...] = (1e-2, 5e-3, 2.5e-3)

    def __post_init__(self) -> None:
        object.__setattr__(self, "v_u", as_vector(self.v_u, name="needle control"))
        object.__setattr__(self, "v_d", as_vector(self.v_d, name="needle disturbance"))
        object.__setattr__(self, "h", as_vector(self.h, name="needle offset"))
        object.__setattr__(self, "eps", tuple(float(e) for e in self.eps))
        if self.l < 0:
            raise ValueError("needle width factor must be nonnegative")
        if not self.eps or min(self.eps) <= 0:
            raise ValueError("needle epsilons must be positive")
        if self.tau - self.l * max(self.eps) < 0:
            raise ValueError("needle starts before time zero")

    def validate(self, sys: ControlSystem) -> None:
        """Check the replacement inputs and offset against `sys`.

        Raises:
            ValueError: Dimensions or boxes do not match.
        """
        if self.h.size != sys.n:
            raise ValueError(f"needle offset has {self.h.size} entries, expected {sys.n}")
        if not sys.control_box.contains(self.v_u, 1e-12):
            raise ValueError("needle control outside the control box")
        if not sys.disturbance_box.contains(self.v_d, 1e-12):
            raise ValueError("needle disturbance outside the disturbance box")

    def scaled(self, mu: float) -> "NeedleSpec":
        """Same needle with ``h`` and ``l`` scaled by `mu`."""
        return dataclasses.replace(self, h=mu * self.h, l=mu * self.l)


def random_needle_spec(
    sys: ControlSystem,
    rng: np.random.Generator,
    t_eval: float,
    *,
    eps: Sequence[float] = (1e-2, 5e-3, 2.5e-3),
    max_offset: float = 5.0,
    max_width: float = 2.0,
) -> NeedleSpec:
    """Draw a needle with ``tau`` in the middle of ``[0, t_eval]``, width
    factor in ``[max_width / 4, max_width]`` and ``0.5 max_offset <= |h| <=
    max_offset``."""
    direction = rng.normal(size=sys.n)
    direction /= np.linalg.norm(direction)
    return NeedleSpec(
        v_u=sys.control_box.sample(rng, 1)[0],
        v_d=sys.disturbance_box.sample(rng, 1)[0],
        tau=float(rng.uniform(0.3, 0.7) * t_eval),
        l=float(rng.uniform(0.25, 1.0) * max_width),
        h=direction * rng.uniform(0.5, 1.0) * max_offset,
        eps=tuple(eps),
    )


def _final_state(sys, x0, schedule, t_eval, settings) -> np.ndarray:
    traj = simulate(sys, x0, schedule, (0.0, t_eval), settings)
    if traj.termination.kind != TerminationKind.SPAN_END:
        raise StepFailure(traj.termination.message, t=traj.t_final, state=traj.x_final)
    return traj.x_final


def needle_direction(
    sys: ControlSystem,
    x0: Sequence[float],
    base: InputSchedule,
    spec: NeedleSpec,
    t_eval: float,
    settings: Optional[IntegratorSettings] = None,
) -> np.ndarray:
    """First order variation ``w`` of the state at `t_eval`::

        w = Phi(t, 0) h + l Phi(t, tau) (f(x(tau), v) - f(x(tau), vbar(tau)))
    """
    settings = settings or TIGHT_INTEGRATOR
    fundamental = propagate_variational(sys, x0, base, (0.0, t_eval), settings)
    return _needle_direction(sys, fundamental, base, spec, t_eval)


def _needle_direction(sys, fundamental, base, spec, t_eval) -> np.ndarray:
    w = fundamental.from_start(t_eval) @ spec.h
    if spec.l == 0:
        return w
    x_tau = fundamental.state(spec.tau)
    u_bar, d_bar = base(spec.tau)
    jump = eval_dynamics(sys, x_tau, spec.v_u, spec.v_d) - eval_dynamics(sys, x_tau, u_bar, d_bar)
    return w + spec.l * (fundamental(t_eval, spec.tau) @ jump)


@dataclasses.dataclass(frozen=True)
class NeedleReport:
    """Remainder of the first order needle approximation."""

    eps: Tuple[float, ...]
    #: ``|x_eps(t) - x(t) - eps w|`` per epsilon
    errors: Tuple[float, ...]
    #: ``E(eps_k) / E(eps_k+1)`` for consecutive epsilons
    ratios: Tuple[float, ...]
    #: Fitted exponent of ``E(eps)``; None when every error vanishes
    order: Optional[float]
    w: np.ndarray

    def to_dict(self) -> dict:
        """JSON-compatible form."""
        return _report_dict(self)


def check_needle(
    sys: ControlSystem,
    x0: Sequence[float],
    base: InputSchedule,
    spec: NeedleSpec,
    t_eval: float,
    settings: Optional[IntegratorSettings] = None,
) -> NeedleReport:
    """Compare needle-perturbed simulations with their first order prediction.

    `base` must cover ``[0, t_eval]`` and be continuous at ``spec.tau``.

    Raises:
        StepFailure: A simulation failed.
    """
    settings = settings or TIGHT_INTEGRATOR
    spec.validate(sys)
    x0 = as_vector(x0, sys.n, "initial state")
    if not 0 < spec.tau <= t_eval:
        raise ValueError("needle time must lie in (0, t_eval]")
    fundamental = propagate_variational(sys, x0, base, (0.0, t_eval), settings)
    w = _needle_direction(sys, fundamental, base, spec, t_eval)
    nominal = _final_state(sys, x0, base, t_eval, settings)

    errors = []
    for eps in spec.eps:
        schedule = base.splice(spec.tau - spec.l * eps, spec.tau, spec.v_u, spec.v_d)
        perturbed = _final_state(sys, x0 + eps * spec.h, schedule, t_eval, settings)
        errors.append(float(np.linalg.norm(perturbed - nominal - eps * w)))

    ratios = tuple(
        errors[k] / errors[k + 1] if errors[k + 1] > 0 else math.inf for k in range(len(errors) - 1)
    )
    order = None
    if len(errors) > 1 and min(errors) > 0:
        order = float(np.polyfit(np.log(spec.eps), np.log(errors), 1)[0])
    logger.debug("needle check", extra={"errors": errors, "order": order})
    return NeedleReport(spec.eps, tuple(errors), ratios, order, w)


def check_scaling(
    sys: ControlSystem,
    x0: Sequence[float],
    base: InputSchedule,
    spec: NeedleSpec,
    t_eval: float,
    mu: float = 2.5,
    settings: Optional[IntegratorSettings] = None,
) -> float:
    """Relative deviation of ``w(mu h, mu l)`` from ``mu w(h, l)``."""
    if mu <= 0:
        raise ValueError("scaling factor must be positive")
    settings = settings or TIGHT_INTEGRATOR
    fundamental = propagate_variational(sys, x0, base, (0.0, t_eval), settings)
    w = _needle_direction(sys, fundamental, base, spec, t_eval)
    w_scaled = _needle_direction(sys, fundamental, base, spec.scaled(mu), t_eval)
    return float(np.max(np.abs(w_scaled - mu * w))) / max(1.0, float(np.max(np.abs(mu * w))))


@dataclasses.dataclass(frozen=True)
class PermeabilityReport:
    """Outcome of the semi-permeability probes along one barrier."""

    n_probes: int
    n_controls: int
    #: Probes outside the barrier from which every candidate control exits
    outside_exit_fraction: float
    #: Largest distance between the replayed and the stored trajectory
    replay_deviation: float
    #: Stored samples reproduced within the tube tolerance
    replay_fraction: float
    #: Probes inside the barrier that exit under the barrier control
    inside_exit_fraction: float
    diagnostics: Dict[str, int] = dataclasses.field(default_factory=dict)

    def to_dict(self) -> dict:
        """JSON-compatible form."""
        return _report_dict(self)


def _probe_exits(
    sys: ControlSystem,
    x0: np.ndarray,
    lam0: np.ndarray,
    controls: InputSchedule,
    t_span: Tuple[float, float],
    settings: IntegratorSettings,
    diagnostics: Dict[str, int],
) -> bool:
    """Integrate the state with the adjoint carried along, the disturbance
    maximizing ``lam^T f`` pointwise, until some constraint is violated."""
    if float(np.max(constraint_values(sys, x0))) > 0:
        return True
    n = sys.n
    events = [
        EventSpec(f"g{j + 1}", lambda _t, y, con=con: float(con.func(y[:n])), Direction.RISING)
        for j, con in enumerate(sys.constraints)
    ]

    def make_field(u):
        def field(_t, y):
            x, lam = y[:n], y[n:]
            d = worst_disturbance(sys, x, lam, u)
            return np.concatenate(
                [eval_dynamics(sys, x, u, d), -eval_state_jacobian(sys, x, u, d).T @ lam]
            )

        return field

    t0, t1 = t_span
    cuts = [t0] + [b for b in controls.breaks.tolist() if t0 < b < t1] + [t1]
    y = np.concatenate([x0, lam0])
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        u, _ = controls(lo)
        part = integrate(make_field(u), y, (lo, hi), settings, events)
        if part.termination.kind == TerminationKind.EVENT:
            return True
        if part.termination.kind == TerminationKind.STEP_FAILURE:
            diagnostics["step_failures"] = diagnostics.get("step_failures", 0) + 1
            return False
        if max(float(np.max(constraint_values(sys, s[:n]))) for s in part.x) > 0:
            return True
        y = part.x_final
    return False


def _candidate_controls(
    sys: ControlSystem,
    traj: BarrierTrajectory,
    n_controls: int,
    rng: np.random.Generator,
    t_span: Tuple[float, float],
) -> List[InputSchedule]:
    candidates = [traj.schedule()]
    zero_d = np.zeros(sys.w)
    start, stop = t_span
    for vertex in sys.control_box.vertices():
        if len(candidates) >= n_controls:
            break
        candidates.append(InputSchedule.constant(vertex, zero_d, start, stop))
    vertices = sys.control_box.vertices()
    while len(candidates) < n_controls:
        switches = np.sort(rng.uniform(start, stop, size=3))
        picks = vertices[rng.integers(0, len(vertices), size=4)]
        candidates.append(InputSchedule([start, *switches, stop], picks, [zero_d] * 4))
    return candidates


def check_semipermeability(
    sys: ControlSystem,
    traj: BarrierTrajectory,
    eps_geo: float = 1e-3,
    horizon: float = 60.0,
    n_controls: int = 16,
    rng: Optional[np.random.Generator] = None,
    settings: Optional[IntegratorSettings] = None,
    tube_tol: float = 1e-5,
    n_probes: int = 20,
) -> PermeabilityReport:
    """Probe both sides of a barrier.

    The stored trajectory is replayed forward from its interior endpoint with
    its own inputs. Points displaced by `eps_geo` along the outward adjoint
    are then run against `n_controls` candidate controls: the barrier control,
    the control box vertices and random bang-bang signals.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    settings = settings or IntegratorSettings()
    diagnostics: Dict[str, int] = {}

    replay_deviation = 0.0
    replay_fraction = 1.0
    if len(traj) > 1 and traj.t[-1] < 0:
        replay = simulate(sys, traj.x[-1], traj.schedule(), (float(traj.t[-1]), 0.0), settings)
        deviations = []
        for t, x in zip(traj.t, traj.x):
            if replay.t[0] <= t <= replay.t[-1]:
                deviations.append(float(np.linalg.norm(replay(t) - x)))
            else:
                deviations.append(math.inf)
        replay_deviation = max(deviations)
        replay_fraction = sum(dev <= tube_tol for dev in deviations) / len(deviations)

    interior = list(range(1, len(traj) - 1))
    if len(interior) > n_probes:
        picks = np.linspace(0, len(interior) - 1, n_probes).round().astype(int)
        interior = sorted({interior[k] for k in picks})
    outside = 0
    inside = 0
    for k in interior:
        lam = traj.lam[k]
        normal = lam / np.linalg.norm(lam)
        t_span = (float(traj.t[k]), float(traj.t[k]) + horizon)
        candidates = _candidate_controls(sys, traj, n_controls, rng, t_span)
        x_out = traj.x[k] + eps_geo * normal
        if all(
            _probe_exits(sys, x_out, lam, control, t_span, settings, diagnostics)
            for control in candidates
        ):
            outside += 1
        x_in = traj.x[k] - eps_geo * normal
        if _probe_exits(sys, x_in, lam, candidates[0], t_span, settings, diagnostics):
            inside += 1
    count = len(interior)
    return PermeabilityReport(
        n_probes=count,
        n_controls=n_controls,
        outside_exit_fraction=outside / count if count else 1.0,
        replay_deviation=replay_deviation,
        replay_fraction=replay_fraction,
        inside_exit_fraction=inside / count if count else 0.0,
        diagnostics=diagnostics,
    )


def check_reparameterization(
    sys: ControlSystem,
    tp: TangencyPoint,
    settings: Optional[BarrierSettings] = None,
    coordinate: int = 0,
    n_points: int = 50,
) -> float:
    """Largest state difference between the time parameterized and the
    coordinate parameterized barrier at matched values of the coordinate."""
    settings = settings or BarrierSettings()
    timed = trace_barrier(sys, tp, settings)
    reparam = trace_barrier_reparam(sys, tp, settings, coordinate)
    lo = max(min(timed.x[:, coordinate]), min(reparam.x[:, coordinate]))
    hi = min(max(timed.x[:, coordinate]), max(reparam.x[:, coordinate]))
    if hi <= lo:
        return 0.0
    worst = 0.0
    n = sys.n
    for value in np.linspace(lo, hi, n_points + 2)[1:-1]:
        a = timed.state_at_coordinate(coordinate, value)[:n]
        b = reparam.state_at_coordinate(coordinate, value)[:n]
        worst = max(worst, float(np.max(np.abs(a - b))))
    return worst


def check_transversality(
    sys: ControlSystem,
    point_at: Callable[[float], TangencyPoint],
    param: float,
    delta: float = 1e-3,
    settings: Optional[BarrierSettings] = None,
    n_points: int = 20,
) -> float:
    """Largest ``|lam . dx|`` after normalization, with ``dx`` the central
    difference of the barrier surface across the family ``point_at`` at equal
    time offsets."""
    settings = settings or BarrierSettings()
    center = trace_barrier(sys, point_at(param), settings)
    plus = trace_barrier(sys, point_at(param + delta), settings)
    minus = trace_barrier(sys, point_at(param - delta), settings)
    start = max(center.t[-1], plus.t[-1], minus.t[-1])
    if start >= 0:
        return 0.0
    n = sys.n
    worst = 0.0
    for t in np.linspace(start, 0.0, n_points + 2)[1:-1]:
        lam = center.state_at_time(t)[n:]
        tangent = plus.state_at_time(t)[:n] - minus.state_at_time(t)[:n]
        scale = np.linalg.norm(lam) * np.linalg.norm(tangent)
        if scale > 0:
            worst = max(worst, abs(float(lam @ tangent)) / scale)
    return worst


def _rk4(sys: ControlSystem, x: np.ndarray, u, d, h: float) -> np.ndarray:
    def f(y):
        return np.asarray(sys.dynamics(y, u, d), dtype=float)

    k1 = f(x)
    k2 = f(x + h / 2 * k1)
    k3 = f(x + h / 2 * k2)
    k4 = f(x + h * k3)
    return x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def _peak_constraint(sys: ControlSystem, x: np.ndarray) -> float:
    return max(float(con.func(x)) for con in sys.constraints)


def lookahead_feedback(
    sys: ControlSystem,
    x: np.ndarray,
    horizon: float = LOOKAHEAD,
    steps: int = LOOKAHEAD_STEPS,
    n_controls: int = FEEDBACK_CONTROLS,
) -> Tuple[np.ndarray, np.ndarray]:
    """Minimax input pair over a short prediction: each control on a grid of
    the control box is held against each disturbance vertex, and the control
    with the smallest worst predicted peak of ``max_j g_j`` wins together with
    the disturbance attaining that peak. Ties go to the first grid control."""
    controls = sys.control_box.grid(n_controls if sys.m == 1 else 3)
    disturbances = sys.disturbance_box.vertices()
    h = horizon / steps
    table = np.empty((len(controls), len(disturbances)))
    for i, u in enumerate(controls):
        for j, d in enumerate(disturbances):
            y = x
            peak = _peak_constraint(sys, y)
            for _ in range(steps):
                y = _rk4(sys, y, u, d, h)
                peak = max(peak, _peak_constraint(sys, y))
            table[i, j] = peak
    best = int(np.argmin(table.max(axis=1)))
    return controls[best], disturbances[int(np.argmax(table[best]))]


@dataclasses.dataclass(frozen=True)
class AdmissibilityResult:
    """Outcome of a closed-loop simulation."""

    admissible: bool
    #: Time the first constraint exceeded the tolerance
    exit_time: Optional[float]
    #: 1-based index of that constraint
    exit_index: Optional[int]
    final_state: np.ndarray


def simulate_admissibility(
    sys: ControlSystem,
    x0: Sequence[float],
    horizon: float = 60.0,
    feedback: Optional[Feedback] = None,
    *,
    g_tol: float = 1e-9,
    period: float = CONTROL_PERIOD,
    substeps: int = SIM_SUBSTEPS,
) -> AdmissibilityResult:
    """Sampled-data closed-loop simulation from `x0` over ``[0, horizon]``.

    Inputs are recomputed every `period` by `feedback`, by default
    :func:`lookahead_feedback`, and held in between. The state is admissible
    when every constraint stays below `g_tol`.
    """
    feedback = feedback or (lambda x: lookahead_feedback(sys, x))
    x = as_vector(x0, sys.n, "initial state")
    values = constraint_values(sys, x)
    if float(np.max(values)) > g_tol:
        return AdmissibilityResult(False, 0.0, int(np.argmax(values)) + 1, x)
    t = 0.0
    while t < horizon - 1e-12:
        u, d = feedback(x)
        h = min(period, horizon - t) / substeps
        for _ in range(substeps):
            x = _rk4(sys, x, u, d, h)
            t += h
            values = constraint_values(sys, x)
            if float(np.max(values)) > g_tol:
                return AdmissibilityResult(False, t, int(np.argmax(values)) + 1, x)
    return AdmissibilityResult(True, None, None, x)


@dataclasses.dataclass(frozen=True)
class MembershipReport:
    """Agreement between slice membership and closed-loop simulation."""

    n_points: int
    agreement: float
    #: Slice-plane points the simulation found inadmissible
    disagreements: Tuple[Tuple[float, float], ...]

    def to_dict(self) -> dict:
        """JSON-compatible form."""
        return {
            "n_points": self.n_points,
            "agreement": self.agreement,
            "disagreements": [list(q) for q in self.disagreements],
        }


def check_membership(
    sys: ControlSystem,
    slice_: AdmissibleSetSlice,
    n_points: int,
    rng: np.random.Generator,
    *,
    margin: float = 0.0,
    horizon: float = 60.0,
    max_draws: int = 100000,
) -> MembershipReport:
    """Sample points strictly inside `slice_`, at least `margin` away from
    its boundary, and simulate each from the lifted state."""
    poly = slice_.polygon
    if slice_.degenerate or len(poly) < 3:
        return MembershipReport(0, 1.0, ())
    lower = poly.min(axis=0)
    upper = poly.max(axis=0)
    points: List[np.ndarray] = []
    draws = 0
    while len(points) < n_points and draws < max_draws:
        draws += 1
        q = rng.uniform(lower, upper)
        result = contains(slice_, q)
        if result.kind == Membership.INSIDE and result.distance >= margin:
            points.append(q)
    misses = []
    for q in points:
        x0 = lift_point(sys, q, slice_.coords, slice_.param)
        if not simulate_admissibility(sys, x0, horizon).admissible:
            misses.append((float(q[0]), float(q[1])))
    count = len(points)
    return MembershipReport(count, 1.0 - len(misses) / count if count else 1.0, tuple(misses))


def check_closedness(
    sys: ControlSystem,
    slice_: AdmissibleSetSlice,
    n_samples: int,
    rng: np.random.Generator,
    *,
    inset: Optional[float] = None,
    horizon: float = 60.0,
) -> float:
    """Fraction of random boundary points that are classified as boundary
    points and stay admissible in closed-loop simulation.

    Each sample is moved `inset` along the inward edge normal before it is
    lifted and simulated, by default a thousandth of the slice extent;
    samples whose inset point is not inside (near corners) are simulated
    from the boundary point itself.
    """
    poly = slice_.polygon
    if len(poly) < 3:
        return 1.0
    closed = np.vstack([poly, poly[:1]])
    edges = np.diff(closed, axis=0)
    lengths = np.linalg.norm(edges, axis=1)
    total = float(np.sum(lengths))
    if total == 0:
        return 1.0
    if inset is None:
        inset = 1e-3 * float(np.max(poly.max(axis=0) - poly.min(axis=0)))
    orientation = 1.0 if signed_area(poly) > 0 else -1.0
    cumulative = np.concatenate([[0.0], np.cumsum(lengths)])
    hits = 0
    for s in rng.uniform(0.0, total, size=n_samples):
        k = min(int(np.searchsorted(cumulative, s, side="right")) - 1, len(lengths) - 1)
        if lengths[k] == 0:
            continue
        q = closed[k] + (s - cumulative[k]) / lengths[k] * edges[k]
        if contains(slice_, q).kind != Membership.BOUNDARY:
            continue
        normal = orientation * np.array([-edges[k][1], edges[k][0]]) / lengths[k]
        start = q + inset * normal
        if contains(slice_, start).kind != Membership.INSIDE:
            start = q
        x0 = lift_point(sys, start, slice_.coords, slice_.param)
        hits += simulate_admissibility(sys, x0, horizon).admissible
    return hits / n_samples
