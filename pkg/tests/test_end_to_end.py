"""
End to end tests for the cruise control pipeline
"""

import contextlib
import io
import json
import os
import tempfile
import unittest

from barrierkit.acc import AccParameters, acc_nominal_parameters, acc_pipeline, acc_slice
from barrierkit.assemble import Membership, contains
from barrierkit.cmd.main import run
from barrierkit.config import RunConfig
from barrierkit.export import dumps_json

SPEEDS = [10.0, 20.0, 45.0]


class TestEndToEnd(unittest.TestCase):
    """
    End to end tests for barrierkit.
    """

    @classmethod
    def setUpClass(cls):
        cls.config = RunConfig(z1=SPEEDS, threads=3)
        cls.result = acc_pipeline(AccParameters(), cls.config)

    def test_slices(self):
        """Test every slice closes around two tangency junctions"""
        self.assertEqual([], self.result.failed)
        for res in self.result.slices:
            self.assertEqual("ok", res.status)
            self.assertEqual(2, len(res.slice.junctions))
            self.assertEqual([True, True], res.checks["branch_inputs"])
            for angle in res.checks["junction_angles"]:
                self.assertLessEqual(angle, 1e-3)
            self.assertLessEqual(res.checks["closure_gap"], self.config.stitch_tol)

    def test_area_ordering(self):
        """Test the admissible set shrinks as the leader speeds up"""
        areas = [res.area for res in self.result.slices]
        self.assertGreater(areas[0], areas[1])
        self.assertGreater(areas[1], areas[2])

    def test_nominal_area(self):
        """Test disturbances only shrink the admissible set"""
        robust = self.result.slices[1]
        nominal = acc_slice(acc_nominal_parameters(), 20.0, self.config)
        self.assertEqual("ok", nominal.status)
        self.assertLessEqual(robust.area, nominal.area)

    def test_membership(self):
        """Test obviously safe and unsafe follower states"""
        slice_ = self.result.slices[0].slice
        self.assertEqual(Membership.INSIDE, contains(slice_, (10.0, 50.0)).kind)
        self.assertEqual(Membership.OUTSIDE, contains(slice_, (40.0, 75.0)).kind)

    def test_deterministic(self):
        """Test identical runs produce identical manifests"""
        again = acc_pipeline(AccParameters(), RunConfig(z1=SPEEDS, threads=1))
        first = self.result.manifest()["slices"]
        second = again.manifest()["slices"]
        self.assertEqual(dumps_json(first), dumps_json(second))
        manifest = self.result.manifest()
        self.assertEqual(1, len(manifest["assumptions"]))
        self.assertEqual(SPEEDS, manifest["config"]["z1"])

    def test_cli(self):
        """Test the acc utility writes its output tree"""
        with tempfile.TemporaryDirectory() as tmp:
            out = io.StringIO()
            with contextlib.redirect_stdout(out):
                code = run(["acc", "--z1", "10,20", "--out", tmp, "--format", "csv,json,svg"])
            self.assertEqual(0, code)
            summary = json.loads(out.getvalue())
            self.assertEqual(2, summary["slices"])
            self.assertEqual([], summary["failed"])
            with open(os.path.join(tmp, "manifest.json"), encoding="utf-8") as fin:
                manifest = json.load(fin)
            self.assertEqual(["ok", "ok"], [entry["status"] for entry in manifest["slices"]])
            self.assertFalse(manifest["nominal"])
            for name in ("slice_0.csv", "slice_0.json", "slice_1.svg"):
                self.assertTrue(os.path.isfile(os.path.join(tmp, "slices", name)))
            for name in ("g1_0.csv", "g2_0.csv", "g1_1.csv", "g2_1.csv"):
                self.assertTrue(os.path.isfile(os.path.join(tmp, "barriers", name)))
