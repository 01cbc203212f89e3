"""
Pointwise min-max problems over the control and disturbance boxes.

For input-affine systems the saddle points are bang-bang and computed in
closed form from the switching functions; other systems fall back to an
alternating best-response search.
"""

import dataclasses
import logging
from enum import IntEnum
from typing import Callable, Tuple

import numpy as np
from scipy import optimize

from .exceptions import SaddleNotFound
from .sysmodel import (
    ActiveSet,
    Box,
    ControlSystem,
    affine_terms,
    as_vector,
    constraint_gradient,
    eval_dynamics,
)

logger = logging.getLogger(__name__)

#: Switching functions within this band select the neutral input
SWITCH_TOL = 1e-12
#: Largest accepted duality gap
SADDLE_TOL = 1e-9
BEST_RESPONSE_ITERATIONS = 200
# Points per axis of the cross-check grid for multi-constraint problems.
_CHECK_GRID = 17


class SaddleMethod(IntEnum):
    """How a saddle point was obtained."""

    AFFINE_CLOSED_FORM = 0
    BEST_RESPONSE = 1
    PIECEWISE_MINIMAX = 2


@dataclasses.dataclass(frozen=True, eq=False)
class SaddleResult:
    """Optimal inputs and value of a pointwise min-max problem."""

    u_star: np.ndarray
    d_star: np.ndarray
    value: float
    #: Difference between the min-max and max-min estimates
    gap: float
    method: SaddleMethod


def bang_control(box: Box, switching: np.ndarray, tol: float = SWITCH_TOL) -> np.ndarray:
    """Minimizer of ``switching . u`` over `box`, neutral inside the band."""
    return np.where(
        switching > tol, box.lower, np.where(switching < -tol, box.upper, box.neutral())
    )


def bang_disturbance(box: Box, switching: np.ndarray, tol: float = SWITCH_TOL) -> np.ndarray:
    """Maximizer of ``switching . d`` over `box`, neutral inside the band."""
    return np.where(
        switching > tol, box.upper, np.where(switching < -tol, box.lower, box.neutral())
    )


def switching_functions(sys: ControlSystem, x, lam) -> Tuple[np.ndarray, np.ndarray]:
    """``(lam^T Fu(x), lam^T Fd(x))`` for an input-affine system."""
    lam = as_vector(lam, sys.n, "adjoint")
    _, fu, fd = affine_terms(sys, x)
    return lam @ fu, lam @ fd


def _affine_saddle(sys: ControlSystem, x, lam: np.ndarray, switch_tol: float) -> SaddleResult:
    su, sd = switching_functions(sys, x, lam)
    u_star = bang_control(sys.control_box, su, switch_tol)
    d_star = bang_disturbance(sys.disturbance_box, sd, switch_tol)
    value = float(lam @ eval_dynamics(sys, x, u_star, d_star))
    return SaddleResult(u_star, d_star, value, 0.0, SaddleMethod.AFFINE_CLOSED_FORM)


def _box_argmin(
    func: Callable[[np.ndarray], float], box: Box, start: np.ndarray
) -> Tuple[np.ndarray, float]:
    """Coordinate-wise bounded line searches for a minimum of `func` on `box`."""
    point = box.clamp(start)
    best = func(point)
    for _ in range(20):
        improved = False
        for j in range(box.size):
            lo, hi = box.lower[j], box.upper[j]
            if hi <= lo:
                continue

            def along(val, j=j):
                trial = point.copy()
                trial[j] = val
                return func(trial)

            res = optimize.minimize_scalar(
                along, bounds=(lo, hi), method="bounded", options={"xatol": 1e-12}
            )
            for cand in (lo, float(res.x), hi):
                val = along(cand)
                if val < best - 1e-15:
                    best = val
                    point = point.copy()
                    point[j] = cand
                    improved = True
        if not improved:
            break
    return point, best


def _best_response(
    phi: Callable[[np.ndarray, np.ndarray], float],
    ubox: Box,
    dbox: Box,
    saddle_tol: float,
) -> SaddleResult:
    u = ubox.neutral()
    d = dbox.neutral()
    gap = float("inf")
    for _ in range(BEST_RESPONSE_ITERATIONS):
        d, _ = _box_argmin(lambda dd: -phi(u, dd), dbox, d)
        u, lower = _box_argmin(lambda uu: phi(uu, d), ubox, u)
        d_resp, neg_upper = _box_argmin(lambda dd: -phi(u, dd), dbox, d)
        gap = -neg_upper - lower
        if gap <= saddle_tol:
            return SaddleResult(u, d, phi(u, d), max(gap, 0.0), SaddleMethod.BEST_RESPONSE)
        d = d_resp
    raise SaddleNotFound("best response iteration did not close the duality gap", gap=gap)


def saddle_hamiltonian(
    sys: ControlSystem,
    x,
    lam,
    switch_tol: float = SWITCH_TOL,
    saddle_tol: float = SADDLE_TOL,
) -> SaddleResult:
    """Solve ``min_u max_d lam^T f(x, u, d)``.

    Raises:
        ValueError: `lam` is zero.
        SaddleNotFound: The best-response search did not converge.
    """
    lam = as_vector(lam, sys.n, "adjoint")
    if not np.any(lam):
        raise ValueError("adjoint must be nonzero")
    if sys.affine is not None:
        return _affine_saddle(sys, x, lam, switch_tol)
    return _best_response(
        lambda u, d: float(lam @ eval_dynamics(sys, x, u, d)),
        sys.control_box,
        sys.disturbance_box,
        saddle_tol,
    )


def _minimize_max_affine(offsets: np.ndarray, slopes: np.ndarray, box: Box) -> np.ndarray:
    """Minimizer of ``max_i (offsets[i] + slopes[i] . u)`` over `box`."""
    if box.size == 1:
        lo, hi = box.lower[0], box.upper[0]
        candidates = {lo, hi}
        for i in range(len(offsets)):
            for k in range(i + 1, len(offsets)):
                dslope = slopes[i, 0] - slopes[k, 0]
                if dslope != 0:
                    cross = (offsets[k] - offsets[i]) / dslope
                    if lo <= cross <= hi:
                        candidates.add(cross)
        ordered = sorted(candidates)
        values = [float(np.max(offsets + slopes[:, 0] * cand)) for cand in ordered]
        return np.array([ordered[int(np.argmin(values))]])
    # Epigraph form: minimize s subject to offsets + slopes u <= s.
    cost = np.zeros(box.size + 1)
    cost[-1] = 1.0
    a_ub = np.hstack([slopes, -np.ones((len(offsets), 1))])
    bounds = [(lo, hi) for lo, hi in zip(box.lower, box.upper)] + [(None, None)]
    res = optimize.linprog(cost, A_ub=a_ub, b_ub=-offsets, bounds=bounds, method="highs")
    if not res.success:
        raise SaddleNotFound(f"linear program failed: {res.message}")
    return box.clamp(res.x[:-1])


def _multi_affine_saddle(
    sys: ControlSystem, x, indices, switch_tol: float, saddle_tol: float
) -> SaddleResult:
    drift, fu, fd = affine_terms(sys, x)
    grads = np.array([constraint_gradient(sys, i, x) for i in indices])
    consts = grads @ drift
    uslopes = grads @ fu
    dslopes = grads @ fd
    dbox = sys.disturbance_box
    worst_d = np.sum(np.maximum(dslopes * dbox.lower, dslopes * dbox.upper), axis=1)
    u_star = _minimize_max_affine(consts + worst_d, uslopes, sys.control_box)
    pieces = consts + worst_d + uslopes @ u_star
    top = int(np.argmax(pieces))
    value = float(pieces[top])
    d_star = bang_disturbance(dbox, dslopes[top], switch_tol)

    count = _CHECK_GRID if sys.m <= 2 else 2
    ugrid = sys.control_box.grid(count)
    grid_value = min(float(np.max(consts + worst_d + uslopes @ uu)) for uu in ugrid)
    spacing = np.max((sys.control_box.upper - sys.control_box.lower) / (count - 1))
    bound = float(np.max(np.sum(np.abs(uslopes), axis=1))) * spacing
    if value > grid_value + saddle_tol or grid_value - value > bound + saddle_tol:
        raise SaddleNotFound(
            "piecewise minimax disagrees with grid cross-check", gap=grid_value - value
        )
    return SaddleResult(u_star, d_star, value, grid_value - value, SaddleMethod.PIECEWISE_MINIMAX)


def saddle_lie(
    sys: ControlSystem,
    x,
    active: ActiveSet,
    switch_tol: float = SWITCH_TOL,
    saddle_tol: float = SADDLE_TOL,
) -> SaddleResult:
    """Solve ``min_u max_d max_{i in active} L_f g_i(x, u, d)``.

    With several active constraints the reported gap is the distance between
    the exact minimax value and a grid evaluation of it.

    Raises:
        ValueError: The active set is empty.
        SaddleNotFound: No saddle point could be computed.
    """
    indices = tuple(active)
    if not indices:
        raise ValueError("active set must be nonempty")
    if len(indices) == 1:
        lam = constraint_gradient(sys, indices[0], x)
        if sys.affine is not None:
            return _affine_saddle(sys, x, lam, switch_tol)
        return _best_response(
            lambda u, d: float(lam @ eval_dynamics(sys, x, u, d)),
            sys.control_box,
            sys.disturbance_box,
            saddle_tol,
        )
    if sys.affine is not None:
        return _multi_affine_saddle(sys, x, indices, switch_tol, saddle_tol)
    grads = np.array([constraint_gradient(sys, i, x) for i in indices])
    return _best_response(
        lambda u, d: float(np.max(grads @ eval_dynamics(sys, x, u, d))),
        sys.control_box,
        sys.disturbance_box,
        saddle_tol,
    )


def worst_disturbance(sys: ControlSystem, x, lam, u, switch_tol: float = SWITCH_TOL) -> np.ndarray:
    """Maximizer of ``lam^T f(x, u, d)`` over the disturbance box."""
    lam = as_vector(lam, sys.n, "adjoint")
    if sys.affine is not None:
        _, sd = switching_functions(sys, x, lam)
        return bang_disturbance(sys.disturbance_box, sd, switch_tol)
    dbox = sys.disturbance_box
    d, _ = _box_argmin(lambda dd: -float(lam @ eval_dynamics(sys, x, u, dd)), dbox, dbox.neutral())
    return d

