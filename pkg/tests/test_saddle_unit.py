"""
Unit tests for the pointwise min-max solvers
"""

import dataclasses
import unittest

import numpy as np

from barrierkit.acc import AccParameters, acc_system
from barrierkit.saddle import (
    SaddleMethod,
    bang_control,
    bang_disturbance,
    saddle_hamiltonian,
    saddle_lie,
    worst_disturbance,
)
from barrierkit.sysmodel import (
    ActiveSet,
    Box,
    Constraint,
    ControlSystem,
    eval_dynamics,
    lie_derivative,
)


def seeded_rand(func):
    """Test decorator that passes a rng seeded on the test name"""

    def _invoke(*args, **kwargs):
        return func(*args, np.random.default_rng(list(func.__name__.encode())), **kwargs)

    return _invoke


def _grid_minimax(sys, x, lam, count=41):
    """Brute force min over a control grid of the max over disturbance vertices."""
    ugrid = sys.control_box.grid(count)
    dverts = sys.disturbance_box.vertices()
    return min(
        max(float(lam @ eval_dynamics(sys, x, u, d)) for d in dverts) for u in ugrid
    )


class TestSaddleUnit(unittest.TestCase):
    """
    Unit tests for saddle points
    """

    def setUp(self):
        self.sys = acc_system()

    def test_bang_inputs(self):
        """Test bang-bang selection and the neutral band"""
        box = Box.from_pairs([(-1, 2), (-1, 2), (-1, 2)])
        switching = np.array([1.0, -1.0, 0.0])
        np.testing.assert_array_equal([-1, 2, 0], bang_control(box, switching))
        np.testing.assert_array_equal([2, -1, 0], bang_disturbance(box, switching))
        np.testing.assert_array_equal([0, 0, 0], bang_control(box, 1e-13 * switching))

    @seeded_rand
    def test_affine_saddle(self, rng):
        """Test the closed form saddle against a brute force grid"""
        for _ in range(20):
            x = rng.uniform([0, 0, 0], [50, 50, 100])
            lam = rng.normal(size=3)
            res = saddle_hamiltonian(self.sys, x, lam)
            self.assertEqual(SaddleMethod.AFFINE_CLOSED_FORM, res.method)
            self.assertEqual(0.0, res.gap)
            self.assertAlmostEqual(_grid_minimax(self.sys, x, lam), res.value, delta=1e-9)

    def test_headway_saddle_inputs(self):
        """Test the headway gradient selects braking against the worst leader"""
        res = saddle_lie(self.sys, [10.0, 20.0, 36.0], ActiveSet((1,)))
        np.testing.assert_array_equal([-0.5], res.u_star)
        np.testing.assert_array_equal([0.0, 0.4], res.d_star)

    @seeded_rand
    def test_best_response_matches_closed_form(self, rng):
        """Test the generic search reproduces the affine solution"""
        generic = dataclasses.replace(self.sys, affine=None)
        for _ in range(5):
            x = rng.uniform([0, 0, 0], [50, 50, 100])
            lam = rng.normal(size=3)
            expected = saddle_hamiltonian(self.sys, x, lam)
            res = saddle_hamiltonian(generic, x, lam)
            self.assertEqual(SaddleMethod.BEST_RESPONSE, res.method)
            self.assertAlmostEqual(expected.value, res.value, delta=1e-8)
            self.assertLessEqual(res.gap, 1e-9)

    def test_best_response_interior(self):
        """Test a convex-concave problem with an interior saddle point"""
        sys = ControlSystem(
            name="quadratic",
            n=2,
            m=1,
            w=1,
            dynamics=lambda x, u, d: np.array([u[0] ** 2 + u[0] * d[0] - d[0] ** 2, 0.0]),
            control_box=Box.from_pairs([(-1, 1)]),
            disturbance_box=Box.from_pairs([(-1, 1)]),
            constraints=(Constraint("g1", lambda x: x[0], lambda x: np.array([1.0, 0.0])),),
        )
        res = saddle_hamiltonian(sys, [0.0, 0.0], [1.0, 0.0])
        self.assertAlmostEqual(0.0, res.value, delta=1e-8)
        self.assertAlmostEqual(0.0, res.u_star[0], delta=1e-4)
        self.assertAlmostEqual(0.0, res.d_star[0], delta=1e-4)

    def test_preconditions(self):
        """Test zero adjoints and empty active sets are rejected"""
        with self.assertRaises(ValueError):
            saddle_hamiltonian(self.sys, [1.0, 1.0, 1.0], [0.0, 0.0, 0.0])
        with self.assertRaises(ValueError):
            saddle_lie(self.sys, [1.0, 1.0, 1.0], ActiveSet(()))

    def test_multi_active(self):
        """Test the corner of both cruise control constraints"""
        p = AccParameters()
        x = np.array([40.0, p.d_max / p.tau, p.d_max])
        res = saddle_lie(self.sys, x, ActiveSet((1, 2)))
        self.assertEqual(SaddleMethod.PIECEWISE_MINIMAX, res.method)
        expected = max(
            lie_derivative(self.sys, 1, x, [-0.5], [0.0, 0.4]),
            lie_derivative(self.sys, 2, x, [0.0], [0.0, 0.0]),
        )
        self.assertAlmostEqual(expected, res.value, delta=1e-9)
        self.assertLessEqual(abs(res.gap), 1e-9)

    def test_worst_disturbance(self):
        """Test the worst disturbance maximizes the Hamiltonian"""
        lam = np.array([1.0, -1.0, 0.5])
        x = np.array([10.0, 20.0, 30.0])
        d = worst_disturbance(self.sys, x, lam, [0.0])
        np.testing.assert_array_equal([0.3, -0.4], d)
        generic = dataclasses.replace(self.sys, affine=None)
        np.testing.assert_allclose(d, worst_disturbance(generic, x, lam, [0.0]), atol=1e-9)
