"""
Unit tests for the ODE integrators
"""

import math
import unittest

import numpy as np
from scipy import integrate as quad
from scipy import linalg

from barrierkit.config import IntegratorSettings
from barrierkit.ode import (
    Direction,
    EventSpec,
    InputSchedule,
    TerminationKind,
    integrate,
    propagate_variational,
    simulate,
)
from barrierkit.sysmodel import get_system


class TestIntegrateUnit(unittest.TestCase):
    """
    Unit tests for the integration loop
    """

    def test_exponential_decay(self):
        """Test samples and dense output against exp(-t)"""
        traj = integrate(lambda t, y: -y, [1.0], (0.0, 5.0))
        self.assertEqual(TerminationKind.SPAN_END, traj.termination.kind)
        self.assertEqual(5.0, traj.t_final)
        self.assertAlmostEqual(math.exp(-5.0), traj.x_final[0], delta=1e-8)
        for t in (0.1, 1.7, 2.3, 4.99):
            self.assertAlmostEqual(math.exp(-t), traj(t)[0], delta=1e-7)
        self.assertTrue((np.diff(traj.t) > 0).all())
        self.assertTrue((np.diff(traj.t) <= 0.5 + 1e-12).all())

    def test_backward_span(self):
        """Test integrating backward in time"""
        traj = integrate(lambda t, y: y, [1.0], (0.0, -3.0))
        self.assertEqual(-1.0, traj.direction)
        self.assertAlmostEqual(math.exp(-3.0), traj.x_final[0], delta=1e-8)
        self.assertAlmostEqual(math.exp(-1.5), traj(-1.5)[0], delta=1e-7)
        with self.assertRaises(ValueError):
            traj(1.0)

    def test_time_dependent_field(self):
        """Test the field receives the true time on backward spans"""
        traj = integrate(lambda t, y: np.array([t]), [0.0], (2.0, 0.0))
        self.assertAlmostEqual(-2.0, traj.x_final[0], delta=1e-9)

    def test_rk4(self):
        """Test the fixed step method"""
        settings = IntegratorSettings(method="rk4", fixed_step=1e-2)
        traj = integrate(lambda t, y: -y, [1.0], (0.0, 2.0), settings)
        self.assertAlmostEqual(math.exp(-2.0), traj.x_final[0], delta=1e-9)
        self.assertAlmostEqual(math.exp(-1.005), traj(1.005)[0], delta=1e-7)

    def test_invalid_span(self):
        """Test empty and non-finite spans are rejected"""
        with self.assertRaises(ValueError):
            integrate(lambda t, y: y, [1.0], (1.0, 1.0))
        with self.assertRaises(ValueError):
            integrate(lambda t, y: y, [1.0], (0.0, float("inf")))

    def test_terminal_event(self):
        """Test a terminal event stops integration at the crossing"""
        event = EventSpec("hit", lambda t, y: y[0] - 2.5)
        traj = integrate(lambda t, y: np.ones(1), [0.0], (0.0, 10.0), events=[event])
        self.assertEqual(TerminationKind.EVENT, traj.termination.kind)
        self.assertEqual("hit", traj.termination.event)
        self.assertAlmostEqual(2.5, traj.t_final, delta=1e-9)
        self.assertAlmostEqual(2.5, traj.x_final[0], delta=1e-9)
        self.assertEqual("hit", traj.events[0][0])

    def test_event_direction(self):
        """Test events ignore crossings in the other direction"""
        event = EventSpec("down", lambda t, y: y[0] - 2.5, Direction.FALLING)
        traj = integrate(lambda t, y: np.ones(1), [0.0], (0.0, 5.0), events=[event])
        self.assertEqual(TerminationKind.SPAN_END, traj.termination.kind)
        self.assertEqual([], traj.events)

    def test_nonterminal_event(self):
        """Test non-terminal events are recorded without stopping"""
        event = EventSpec("pass", lambda t, y: y[0] - 1.0, terminal=False)
        traj = integrate(lambda t, y: np.ones(1), [0.0], (0.0, 3.0), events=[event])
        self.assertEqual(TerminationKind.SPAN_END, traj.termination.kind)
        self.assertEqual(1, len(traj.events))
        self.assertAlmostEqual(1.0, traj.events[0][1], delta=1e-9)

    def test_event_at_start(self):
        """Test an event starting on its zero set does not fire immediately"""
        event = EventSpec("zero", lambda t, y: y[0])
        traj = integrate(lambda t, y: np.ones(1), [0.0], (0.0, 1.0), events=[event])
        self.assertEqual(TerminationKind.SPAN_END, traj.termination.kind)

    def test_event_after_near_miss(self):
        """Test a crossing right after a step that lands within tolerance of the surface"""
        settings = IntegratorSettings(method="rk4", fixed_step=0.5, event_tol=1e-3)
        event = EventSpec("zero", lambda t, y: y[0])
        traj = integrate(lambda t, y: np.ones(1), [-1.0005], (0.0, 3.0), settings, [event])
        self.assertEqual(TerminationKind.EVENT, traj.termination.kind)
        self.assertAlmostEqual(1.0005, traj.t_final, delta=2e-3)
        self.assertLessEqual(abs(traj.x_final[0]), 1e-3)

    def test_step_budget(self):
        """Test an exhausted step budget ends with a partial solution"""
        settings = IntegratorSettings(max_steps=1)
        with self.assertLogs("barrierkit.ode", "WARNING"):
            traj = integrate(lambda t, y: -y, [1.0], (0.0, 10.0), settings)
        self.assertEqual(TerminationKind.STEP_FAILURE, traj.termination.kind)
        self.assertLess(traj.t_final, 10.0)


class TestScheduleUnit(unittest.TestCase):
    """
    Unit tests for piecewise-constant input schedules
    """

    def test_schedule_lookup(self):
        """Test right-continuity and left limits"""
        schedule = InputSchedule([0.0, 1.0, 2.0], [[1.0], [-1.0]], [[0.0], [0.5]])
        self.assertEqual(0.0, schedule.start)
        self.assertEqual(2.0, schedule.stop)
        self.assertEqual([1.0], schedule(0.5)[0].tolist())
        self.assertEqual([-1.0], schedule(1.0)[0].tolist())
        self.assertEqual([1.0], schedule.value_before(1.0)[0].tolist())
        self.assertEqual([-1.0], schedule(7.0)[0].tolist())
        self.assertEqual([1.0], schedule(-1.0)[0].tolist())

    def test_schedule_splice(self):
        """Test splicing a needle into a schedule"""
        schedule = InputSchedule.constant([0.0], [0.0], 0.0, 4.0)
        spliced = schedule.splice(1.0, 1.5, [1.0], [-1.0])
        self.assertEqual([0.0, 1.0, 1.5, 4.0], spliced.breaks.tolist())
        self.assertEqual([1.0], spliced(1.2)[0].tolist())
        self.assertEqual([-1.0], spliced(1.2)[1].tolist())
        self.assertEqual([0.0], spliced(1.5)[0].tolist())
        self.assertIs(schedule, schedule.splice(2.0, 2.0, [1.0], [1.0]))

    def test_schedule_validation(self):
        """Test malformed schedules are rejected"""
        with self.assertRaises(ValueError):
            InputSchedule([0.0, 1.0], [[1.0], [2.0]], [[0.0]])
        with self.assertRaises(ValueError):
            InputSchedule([0.0, 0.0], [[1.0]], [[0.0]])

    def test_simulate_bang_bang(self):
        """Test a double integrator under an accelerate then brake schedule"""
        sys = get_system("linear")
        schedule = InputSchedule([0.0, 1.0, 2.0], [[1.0], [-1.0]], [[0.0], [0.0]])
        traj = simulate(sys, [0.0, 0.0], schedule, (0.0, 2.0))
        np.testing.assert_allclose([1.0, 0.0], traj.x_final, atol=1e-9)
        np.testing.assert_allclose([0.5, 1.0], traj(1.0), atol=1e-9)
        with self.assertRaises(ValueError):
            simulate(sys, [0.0, 0.0], schedule, (2.0, 0.0))


class TestVariationalUnit(unittest.TestCase):
    """
    Unit tests for fundamental matrices
    """

    def test_matrix_exponential(self):
        """Test fundamental matrices of a linear system against expm"""
        amat = np.array([[0.0, 1.0], [-2.0, -0.5]])
        sys = get_system("linear", {"A": amat.tolist()})
        schedule = InputSchedule.constant([0.3], [0.1], 0.0, 4.0)
        fund = propagate_variational(sys, [0.2, -0.1], schedule, (0.0, 4.0))
        for t in (0.5, 2.0, 4.0):
            np.testing.assert_allclose(linalg.expm(amat * t), fund.from_start(t), atol=1e-7)
        np.testing.assert_allclose(linalg.expm(amat * 2.5), fund(4.0, 1.5), atol=1e-7)

    def test_liouville(self):
        """Test det Phi(t, 0) follows the trace of the Jacobian"""
        sys = get_system("acc")
        schedule = InputSchedule.constant([0.1], [0.0, 0.0], 0.0, 5.0)
        fund = propagate_variational(sys, [20.0, 25.0, 60.0], schedule, (0.0, 5.0))
        # Only df2/dx2 sits on the diagonal of the cruise control Jacobian.
        times = np.linspace(0.0, 5.0, 201)
        traces = [np.trace(sys.state_jacobian(fund.state(t), None, None)) for t in times]
        expected = math.exp(quad.trapezoid(traces, times))
        self.assertAlmostEqual(expected, np.linalg.det(fund.from_start(5.0)), delta=1e-5)
