"""
Unit tests for the adaptive cruise control model
"""

import decimal
import math
import unittest

import numpy as np

from barrierkit.acc import (
    CLOSURE_ASSUMPTION,
    AccParameters,
    SliceResult,
    acc_boundary_grid,
    acc_domain_box,
    acc_family,
    acc_grid,
    acc_nominal_parameters,
    acc_slice,
    acc_speed_bound,
    acc_system,
    acc_tangency_g1,
    acc_tangency_g2,
    branch_inputs,
)
from barrierkit.config import BarrierSettings, RunConfig
from barrierkit.exceptions import ConfigError, NoBound, NoRoot
from barrierkit.sysmodel import get_system


def _decimal_params(p):
    ctx = decimal.Context(prec=50)

    def dec(value):
        return ctx.create_decimal(repr(float(value)))

    mass = dec(p.mass)
    return ctx, dec, dec(p.f0) / mass, dec(p.f1) / mass, dec(p.f2) / mass


def decimal_speed_bound(p):
    """Speed bound evaluated in 50 digit arithmetic."""
    ctx, dec, a0, a1, a2 = _decimal_params(p)
    grav = dec(p.grav)
    reach = grav * dec(p.d2_box[0]) + grav * dec(p.u_box[1]) - a0 - dec(p.a) - dec(p.d1_box[1])
    disc = a1 * a1 + 4 * a2 * reach
    return float((-a1 + ctx.sqrt(disc)) / (2 * a2))


def decimal_headway_roots(p, z1):
    """Roots of the headway Lie derivative in 50 digit arithmetic."""
    ctx, dec, a0, a1, a2 = _decimal_params(p)
    tau, grav = dec(p.tau), dec(p.grav)
    qa = tau * a2
    qb = tau * a1 - 1
    qc = tau * (a0 - grav * dec(p.d2_box[1]) - grav * dec(p.u_box[0])) + dec(z1)
    root = ctx.sqrt(qb * qb - 4 * qa * qc)
    return float((-qb - root) / (2 * qa)), float((-qb + root) / (2 * qa))


class TestAccModel(unittest.TestCase):
    """
    Unit tests for parameters, bounds and closed-form tangency points
    """

    def setUp(self):
        self.p = AccParameters()
        self.sys = acc_system(self.p)

    def test_speed_bound(self):
        """Test the speed bound against high precision arithmetic"""
        bound = acc_speed_bound(self.p)
        self.assertAlmostEqual(decimal_speed_bound(self.p), bound, delta=1e-9)
        self.assertAlmostEqual(57.78, bound, delta=0.01)
        box = acc_domain_box(self.p)
        np.testing.assert_array_equal([0.0, 0.0, 0.0], box.lower)
        np.testing.assert_array_equal([bound, 2 * bound, 200.0], box.upper)

    def test_no_speed_bound(self):
        """Test a follower too weak to match any leader"""
        weak = AccParameters(u_box=(-0.5, 0.0))
        with self.assertRaises(NoBound):
            acc_speed_bound(weak)
        with self.assertLogs("barrierkit.acc", "WARNING"):
            sys = acc_system(weak)
        self.assertTrue(math.isinf(sys.domain.upper[0]))

    def test_headway_tangency(self):
        """Test the closed form headway roots"""
        lower, upper = decimal_headway_roots(self.p, 10.0)
        points = acc_tangency_g1(self.p, 10.0, self.sys)
        self.assertEqual(2, len(points))
        self.assertAlmostEqual(lower, points[0].z[1], delta=1e-9)
        self.assertAlmostEqual(upper, points[1].z[1], delta=1e-6)
        self.assertAlmostEqual(11.87, points[0].z[1], delta=0.01)
        self.assertAlmostEqual(3634.8, points[1].z[1], delta=0.1)
        for tp in points:
            self.assertEqual(1, tp.active_index)
            self.assertEqual(self.p.tau * tp.z[1], tp.z[2])
            self.assertLessEqual(abs(tp.residual_lie), 1e-9)
        with self.assertRaises(NoRoot):
            acc_tangency_g1(self.p, 1e4, self.sys)

    def test_distance_tangency(self):
        """Test the distance tangency point and its domain check"""
        tp = acc_tangency_g2(self.p, 10.0, self.sys)
        np.testing.assert_array_equal([10.0, 10.0, 100.0], tp.z)
        self.assertEqual(0.0, tp.residual_lie)
        with self.assertRaises(ValueError):
            acc_tangency_g2(self.p, 100.0, self.sys)

    def test_nominal_parameters(self):
        """Test the disturbance-free variant"""
        nominal = acc_nominal_parameters(self.p)
        self.assertEqual((0.0, 0.0), nominal.d1_box)
        self.assertEqual((0.0, 0.0), nominal.d2_box)
        self.assertEqual(self.p.u_box, nominal.u_box)
        self.assertGreater(acc_speed_bound(nominal), acc_speed_bound(self.p))

    def test_from_dict(self):
        """Test building parameters from configuration data"""
        p = AccParameters.from_dict({"tau": 2}, control_box=[[-1, 1]])
        self.assertEqual(2.0, p.tau)
        self.assertEqual((-1.0, 1.0), p.u_box)
        self.assertAlmostEqual(5.0 / 1650.0, p.to_dict()["a1"])
        with self.assertRaises(ConfigError):
            AccParameters.from_dict({"speed": 1})
        with self.assertRaises(ConfigError):
            AccParameters.from_dict({}, disturbance_box=[[0, 1]])
        with self.assertRaises(ConfigError):
            AccParameters(tau=0.0)
        with self.assertRaises(ConfigError):
            AccParameters(u_box=(1.0, -1.0))

    def test_registry(self):
        """Test the registered builder applies parameter overrides"""
        sys = get_system("acc", {"d_max": 80})
        self.assertEqual(80.0, sys.params["d_max"])
        self.assertEqual(0.0, sys.constraint(2).func(np.array([0.0, 0.0, 80.0])))

    def test_branch_inputs(self):
        """Test the bang-bang inputs of each branch"""
        np.testing.assert_array_equal([-0.5, -0.3, 0.4], branch_inputs(self.p, 1))
        np.testing.assert_array_equal([0.5, 0.3, -0.4], branch_inputs(self.p, 2))

    def test_boundary_grid(self):
        """Test boundary grids lie on their constraints"""
        grid = acc_boundary_grid(self.p, 1, 10.0, 50)
        self.assertEqual((50, 3), grid.shape)
        np.testing.assert_allclose(self.p.tau * grid[:, 1], grid[:, 2])
        self.assertAlmostEqual(100.0, grid[-1, 2])
        grid = acc_boundary_grid(self.p, 2, 10.0, 50)
        np.testing.assert_array_equal(np.full(50, 100.0), grid[:, 2])
        with self.assertRaises(ValueError):
            acc_boundary_grid(self.p, 3, 10.0)

    def test_grid(self):
        """Test explicit and default leader speed grids"""
        self.assertEqual([10.0, 20.0], acc_grid(self.p, RunConfig(z1=[10, 20])))
        grid = acc_grid(self.p, RunConfig(grid=5))
        self.assertEqual(5, len(grid))
        self.assertEqual(0.0, grid[0])
        self.assertAlmostEqual(acc_speed_bound(self.p), grid[-1])


class TestAccSlice(unittest.TestCase):
    """
    A single slice at leader speed 10
    """

    @classmethod
    def setUpClass(cls):
        cls.p = AccParameters()
        cls.result = acc_slice(cls.p, 10.0)

    def test_status(self):
        """Test the slice is built from both branches"""
        result = self.result
        self.assertEqual("ok", result.status)
        self.assertEqual(2, len(result.arcs))
        self.assertEqual([1, 2], [arc.origin.active_index for arc in result.arcs])
        self.assertEqual(1, len(result.candidates.discarded))
        self.assertGreater(result.area, 0.0)

    def test_checks(self):
        """Test the diagnostics recorded with the slice"""
        checks = self.result.checks
        self.assertEqual([True, True], checks["branch_inputs"])
        self.assertLessEqual(checks["closure_gap"], RunConfig().stitch_tol)
        self.assertLessEqual(checks["max_hamiltonian"], BarrierSettings().h_tol)
        for residual in checks["tangency_residuals"]:
            self.assertLessEqual(residual, 1e-9)

    def test_to_dict(self):
        """Test the manifest entry"""
        entry = self.result.to_dict()
        self.assertEqual(10.0, entry["z1"])
        self.assertEqual("ok", entry["status"])
        self.assertEqual(2, len(entry["arcs"]))
        self.assertEqual(2, len(entry["accepted"]))
        self.assertEqual("outside the constraint set", entry["discarded"][0]["reason"])

    def test_failed_result(self):
        """Test failed results carry no area"""
        result = SliceResult(5.0, "failed", "NoRoot: no headway tangency point")
        self.assertTrue(math.isnan(result.area))
        entry = result.to_dict()
        self.assertIsNone(entry["area"])
        self.assertEqual([], entry["arcs"])
        self.assertNotIn("accepted", entry)

    def test_closure_assumption(self):
        """Test the closure assumption is spelled out"""
        self.assertIn("not verified", CLOSURE_ASSUMPTION)

    def test_family(self):
        """Test barrier families keep their leader speed labels"""
        family = acc_family(self.p, [10.0, 20.0], threads=2)
        self.assertEqual([10.0, 20.0], [z1 for z1, _ in family])
        for _, arcs in family:
            self.assertEqual([1, 2], [arc.origin.active_index for arc in arcs])
        np.testing.assert_allclose(self.result.arcs[0].x, family[0][1][0].x, atol=1e-9)
