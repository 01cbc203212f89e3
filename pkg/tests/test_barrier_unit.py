"""
Unit tests for barrier tracing on a disturbed double integrator, whose
barrier through (1, 0) is the parabola x1 = 1 - x2^2.
"""

import dataclasses
import math
import unittest

import numpy as np

from barrierkit.barrier import (
    BarrierTermination,
    trace_barrier,
    trace_barrier_reparam,
    trace_family,
    violates_constraints,
)
from barrierkit.config import BarrierSettings
from barrierkit.exceptions import DenominatorSingular, HamiltonianDrift
from barrierkit.ode import simulate
from barrierkit.sysmodel import Box, get_system
from barrierkit.tangency import make_tangency_point


class TestBarrierUnit(unittest.TestCase):
    """
    Unit tests for barrier trajectories
    """

    def setUp(self):
        self.sys = get_system("linear")
        self.tp = make_tangency_point(self.sys, 1, [1.0, 0.0])
        self.bounded = dataclasses.replace(self.sys, domain=Box.from_pairs([(-2, 2), (-2, 2)]))

    def test_parabola(self):
        """Test the traced barrier follows x1 = 1 - x2^2"""
        traj = trace_barrier(self.sys, self.tp)
        self.assertEqual(BarrierTermination.CONSTRAINT_EXIT, traj.termination)
        self.assertEqual(2, traj.exit_index)
        self.assertEqual("time", traj.parameterization)
        np.testing.assert_allclose([-1.0, math.sqrt(2.0)], traj.endpoint, atol=1e-7)
        np.testing.assert_allclose(1.0 - traj.x[:, 1] ** 2, traj.x[:, 0], atol=1e-8)
        self.assertEqual(0.0, traj.t[0])
        self.assertTrue((np.diff(traj.t) < 0).all())
        self.assertLessEqual(traj.max_hamiltonian, 1e-7)
        self.assertEqual([], traj.switching_times)
        np.testing.assert_array_equal(np.full((len(traj), 1), -1.0), traj.u)
        np.testing.assert_array_equal(np.full((len(traj), 1), 0.5), traj.d)

    def test_adjoint(self):
        """Test the adjoint grows linearly backward in time"""
        traj = trace_barrier(self.sys, self.tp)
        np.testing.assert_allclose(np.ones(len(traj)), traj.lam[:, 0], atol=1e-12)
        np.testing.assert_allclose(-traj.t, traj.lam[:, 1], atol=1e-8)
        state = traj.state_at_time(-1.0)
        np.testing.assert_allclose([0.75, 0.5, 1.0, 1.0], state, atol=1e-8)
        with self.assertRaises(ValueError):
            traj.state_at_time(-10.0)

    def test_schedule_replay(self):
        """Test replaying the applied inputs forward returns to the tangency point"""
        traj = trace_barrier(self.sys, self.tp)
        schedule = traj.schedule()
        self.assertEqual(0.0, schedule.stop)
        self.assertAlmostEqual(traj.t[-1], schedule.start)
        replay = simulate(self.sys, traj.endpoint, schedule, (schedule.start, 0.0))
        np.testing.assert_allclose(self.tp.z, replay.x_final, atol=1e-7)

    def test_arclength_limit(self):
        """Test a probe stops after the requested arclength"""
        probe = trace_barrier(
            self.sys, self.tp, max_arclength=0.1, stop_on_constraint=False
        )
        self.assertEqual(BarrierTermination.DOMAIN_END, probe.termination)
        self.assertAlmostEqual(0.1, probe.arclength, delta=1e-3)
        self.assertLessEqual(probe.arclength, 0.1 + 1e-9)

    def test_domain_face(self):
        """Test traces stop on the faces of a bounded domain"""
        small = dataclasses.replace(self.sys, domain=Box.from_pairs([(-2, 2), (-1, 1)]))
        traj = trace_barrier(small, self.tp)
        self.assertEqual(BarrierTermination.DOMAIN_END, traj.termination)
        self.assertEqual((1, "upper"), traj.exit_face)
        np.testing.assert_allclose([0.0, 1.0], traj.endpoint, atol=1e-8)

    def test_reparameterized(self):
        """Test tracing with the follower coordinate as independent variable"""
        traj = trace_barrier_reparam(self.bounded, self.tp, coordinate=1)
        self.assertEqual("x2", traj.parameterization)
        self.assertEqual(BarrierTermination.CONSTRAINT_EXIT, traj.termination)
        np.testing.assert_array_equal(traj.x[:, 1], traj.s)
        self.assertTrue((np.diff(traj.s) > 0).all())
        np.testing.assert_allclose(1.0 - traj.s**2, traj.x[:, 0], atol=1e-8)
        np.testing.assert_allclose(-2.0 * traj.s, traj.t, atol=1e-8)
        state = traj.state_at_coordinate(1, 1.0)
        np.testing.assert_allclose([0.0, 1.0, 1.0, 2.0], state, atol=1e-8)
        with self.assertRaises(ValueError):
            traj.state_at_coordinate(1, 5.0)
        with self.assertRaises(ValueError):
            traj.state_at_time(-1.0)

    def test_reparameterized_needs_bound(self):
        """Test the parameterizing coordinate needs a finite domain bound"""
        with self.assertRaises(ValueError):
            trace_barrier_reparam(self.sys, self.tp, coordinate=1)
        with self.assertRaises(ValueError):
            trace_barrier_reparam(self.bounded, self.tp, coordinate=2)

    def test_stationary_coordinate(self):
        """Test a stationary coordinate raises or falls back to time"""
        with self.assertRaises(DenominatorSingular):
            trace_barrier_reparam(self.bounded, self.tp, coordinate=0)
        with self.assertLogs("barrierkit.barrier", "WARNING"):
            traj = trace_barrier_reparam(self.bounded, self.tp, coordinate=0, fallback=True)
        self.assertEqual("time", traj.parameterization)

    def test_hamiltonian_drift(self):
        """Test a terminal adjoint off the constraint normal drifts"""
        with self.assertRaises(HamiltonianDrift) as ctx:
            trace_barrier(self.sys, self.tp, lam_final=[1.0, 0.3])
        self.assertGreater(ctx.exception.residual, 0.1)
        traj = trace_barrier(self.sys, self.tp, lam_final=[1.0, 0.3], check_hamiltonian=False)
        self.assertGreater(traj.max_hamiltonian, 0.1)
        with self.assertRaises(ValueError):
            trace_barrier(self.sys, self.tp, lam_final=[0.0, 0.0])

    def test_family(self):
        """Test family tracing keeps input order"""
        other = make_tangency_point(self.sys, 2, [-1.0, 0.0])
        trajs = trace_family(self.sys, [self.tp, other], BarrierSettings(), threads=2)
        self.assertEqual([1, 2], [traj.origin.active_index for traj in trajs])
        np.testing.assert_allclose([1.0, -math.sqrt(2.0)], trajs[1].endpoint, atol=1e-7)
        for traj in trajs:
            self.assertFalse(violates_constraints(self.sys, traj, 1e-8))
