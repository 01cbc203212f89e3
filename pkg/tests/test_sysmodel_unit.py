"""
Unit tests for the system model
"""

import json
import os
import tempfile
import unittest

import numpy as np

import barrierkit  # pylint: disable=unused-import
from barrierkit.exceptions import ConfigError, NumericalError
from barrierkit.sysmodel import (
    Box,
    Constraint,
    ControlSystem,
    active_set,
    affine_discrepancy,
    constraint_values,
    eval_dynamics,
    eval_state_jacobian,
    finite_difference_jacobian,
    get_system,
    in_domain,
    lie_derivative,
    load_system,
    read_system_file,
    register_system,
    registered_systems,
)


def _write_json(directory, name, data):
    path = os.path.join(directory, name)
    with open(path, "w", encoding="utf-8") as fout:
        json.dump(data, fout)
    return path


class TestBox(unittest.TestCase):
    """
    Unit tests for input and domain boxes
    """

    def test_box_basics(self):
        """Test construction, membership and vertex ordering"""
        box = Box.from_pairs([(-1, 2), (3, 4)])
        self.assertEqual(2, box.size)
        self.assertTrue(box.finite)
        self.assertTrue(box.contains([0, 3.5]))
        self.assertFalse(box.contains([2.1, 3.5]))
        self.assertTrue(box.contains([2.1, 3.5], tol=0.2))
        np.testing.assert_array_equal(
            [[-1, 3], [-1, 4], [2, 3], [2, 4]], box.vertices()
        )
        np.testing.assert_array_equal([0, 3], box.neutral())
        np.testing.assert_array_equal([0.5, 3.5], box.midpoint())
        self.assertEqual(box, Box.from_pairs(box.to_pairs()))

    def test_box_rejects_bad_bounds(self):
        """Test that inverted and NaN bounds are rejected"""
        with self.assertRaises(ValueError):
            Box([1.0], [0.0])
        with self.assertRaises(ValueError):
            Box([float("nan")], [0.0])
        with self.assertRaises(ValueError):
            Box.from_pairs([(0.0, 1.0, 2.0)])

    def test_degenerate_vertices(self):
        """Test that a degenerate axis contributes one vertex coordinate"""
        box = Box.from_pairs([(0, 0), (-1, 1)])
        self.assertEqual((2, 2), box.vertices().shape)
        self.assertEqual((5, 2), box.grid(5).shape)

    def test_unbounded(self):
        """Test unbounded boxes cannot be sampled"""
        box = Box.unbounded(3)
        self.assertFalse(box.finite)
        self.assertEqual(float("inf"), box.diameter())
        with self.assertRaises(ValueError):
            box.sample(np.random.default_rng(555), 1)


class TestSystemUnit(unittest.TestCase):
    """
    Unit tests for system evaluation
    """

    def setUp(self):
        self.sys = get_system("linear")

    def test_registry(self):
        """Test the built-in systems are registered"""
        self.assertIn("acc", registered_systems())
        self.assertIn("linear", registered_systems())
        with self.assertRaises(ConfigError):
            get_system("unknown")
        with self.assertRaises(ConfigError):
            get_system("linear", {"B": [[1.0]]})
        with self.assertRaises(ConfigError):
            get_system("linear", {"bogus": 1})

    def test_register_system(self):
        """Test custom builders and duplicate names"""
        calls = []

        def builder(params, control_box=None, disturbance_box=None):
            calls.append((params, control_box, disturbance_box))
            return get_system("linear")

        register_system("linear_alias", builder)
        register_system("linear_alias", builder)
        self.assertIn("linear_alias", registered_systems())
        self.assertEqual(2, get_system("linear_alias").n)
        self.assertEqual(1, len(calls))
        with self.assertRaises(ValueError):
            register_system("linear", builder)

    def test_in_domain(self):
        """Test domain membership with and without tolerance"""
        sys = get_system("acc")
        self.assertTrue(in_domain(sys, [10.0, 10.0, 50.0]))
        self.assertFalse(in_domain(sys, [-1.0, 10.0, 50.0]))
        self.assertTrue(in_domain(sys, [-1.0, 10.0, 50.0], tol=2.0))

    def test_constraint_indices(self):
        """Test constraint indices are 1-based"""
        self.assertEqual(2, self.sys.p)
        self.assertEqual("g1", self.sys.constraint(1).name)
        with self.assertRaises(ValueError):
            self.sys.constraint(0)
        with self.assertRaises(ValueError):
            self.sys.constraint(3)

    def test_eval_dynamics_clamps(self):
        """Test inputs outside their box are clamped with a warning"""
        with self.assertLogs("barrierkit.sysmodel", "WARNING"):
            xdot = eval_dynamics(self.sys, [0.0, 1.0], [2.0], [0.0])
        np.testing.assert_array_equal([1.0, 1.0], xdot)
        with self.assertRaises(ValueError):
            eval_dynamics(self.sys, [0.0, 1.0], [2.0], [0.0], clamp=False)
        with self.assertRaises(ValueError):
            eval_dynamics(self.sys, [0.0, 1.0, 2.0], [0.0], [0.0])

    def test_non_finite_dynamics(self):
        """Test non-finite dynamics name the offending component"""
        sys = ControlSystem(
            name="bad",
            n=2,
            m=1,
            w=1,
            dynamics=lambda x, u, d: np.array([0.0, np.nan]),
            control_box=Box.from_pairs([(-1, 1)]),
            disturbance_box=Box.from_pairs([(-1, 1)]),
            constraints=(Constraint("g1", lambda x: x[0], lambda x: np.array([1.0, 0.0])),),
        )
        with self.assertRaises(NumericalError) as ctx:
            eval_dynamics(sys, [0.0, 0.0], [0.0], [0.0])
        self.assertEqual(1, ctx.exception.component)
        self.assertEqual("finite-difference", sys.jacobian_kind)

    def test_system_validation(self):
        """Test systems reject inconsistent dimensions"""
        with self.assertRaises(ValueError):
            ControlSystem(
                name="bad",
                n=2,
                m=2,
                w=1,
                dynamics=lambda x, u, d: x,
                control_box=Box.from_pairs([(-1, 1)]),
                disturbance_box=Box.from_pairs([(-1, 1)]),
                constraints=(Constraint("g1", lambda x: x[0], lambda x: np.array([1.0, 0.0])),),
            )
        with self.assertRaises(ValueError):
            ControlSystem(
                name="bad",
                n=2,
                m=1,
                w=1,
                dynamics=lambda x, u, d: x,
                control_box=Box.from_pairs([(-1, 1)]),
                disturbance_box=Box.from_pairs([(-1, 1)]),
                constraints=(),
            )

    def test_finite_difference_jacobian(self):
        """Test central differences against a known Jacobian"""
        rng = np.random.default_rng(555)
        for _ in range(20):
            x = rng.uniform(-5, 5, size=2)
            jac = finite_difference_jacobian(lambda y: np.array([y[0] ** 2, y[0] * y[1]]), x)
            expected = np.array([[2 * x[0], 0.0], [x[1], x[0]]])
            np.testing.assert_allclose(expected, jac, rtol=1e-6, atol=1e-8)

    def test_analytic_jacobian(self):
        """Test the linear system reports its matrix as Jacobian"""
        jac = eval_state_jacobian(self.sys, [0.3, -0.2], [0.5], [0.1])
        np.testing.assert_array_equal([[0.0, 1.0], [0.0, 0.0]], jac)
        self.assertEqual("analytic", self.sys.jacobian_kind)

    def test_constraints_and_active_set(self):
        """Test constraint values, active sets and Lie derivatives"""
        np.testing.assert_array_equal([-0.5, -1.5], constraint_values(self.sys, [0.5, 0.0]))
        self.assertEqual((1,), active_set(self.sys, [1.0, 0.0]).indices)
        self.assertFalse(active_set(self.sys, [0.0, 0.0]))
        with self.assertRaises(ValueError):
            active_set(self.sys, [1.0, 0.0], tol=0.0)
        self.assertEqual(2.0, lie_derivative(self.sys, 1, [0.5, 2.0], [0.3], [0.1]))
        self.assertEqual(-2.0, lie_derivative(self.sys, 2, [0.5, 2.0], [0.3], [0.1]))

    def test_affine_discrepancy(self):
        """Test the declared affine splitting matches the dynamics"""
        rng = np.random.default_rng(555)
        self.assertLess(affine_discrepancy(self.sys, rng, 50), 1e-12)


class TestSystemFile(unittest.TestCase):
    """
    Unit tests for JSON system files
    """

    def test_load_system(self):
        """Test loading a linear system with custom boxes"""
        with tempfile.TemporaryDirectory() as tmp:
            path = _write_json(
                tmp,
                "sys.json",
                {
                    "system": "linear",
                    "params": {"constraints": [[1.0, 0.0, 2.0]]},
                    "control_box": [[-2.0, 2.0]],
                },
            )
            sys = load_system(path)
        self.assertEqual(1, sys.p)
        self.assertEqual([[-2.0, 2.0]], sys.control_box.to_pairs())
        self.assertEqual([[-0.5, 0.5]], sys.disturbance_box.to_pairs())

    def test_bad_system_files(self):
        """Test malformed system files raise ConfigError"""
        with tempfile.TemporaryDirectory() as tmp:
            with self.assertRaises(ConfigError):
                read_system_file(os.path.join(tmp, "missing.json"))
            with self.assertRaises(ConfigError):
                read_system_file(_write_json(tmp, "list.json", [1, 2]))
            with self.assertRaises(ConfigError):
                read_system_file(_write_json(tmp, "noname.json", {"params": {}}))
            with self.assertRaises(ConfigError):
                read_system_file(_write_json(tmp, "extra.json", {"system": "acc", "x": 1}))
