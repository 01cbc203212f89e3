"""
Unit tests for the command line interface
"""

import contextlib
import io
import json
import os
import tempfile
import unittest

from barrierkit.acc import AccParameters, PipelineResult, SliceResult
from barrierkit.cmd.acc import slice_status
from barrierkit.cmd.common import EXIT_FAILURE, EXIT_OK
from barrierkit.cmd.main import build_parser, run
from barrierkit.config import RunConfig


def _run(argv):
    out, err = io.StringIO(), io.StringIO()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
        code = run(argv)
    return code, out.getvalue(), err.getvalue()


class TestCliUnit(unittest.TestCase):
    """
    Unit tests for exit codes and printed documents
    """

    def test_help(self):
        """Test running without a utility prints help"""
        code, out, _ = _run([])
        self.assertEqual(0, code)
        self.assertIn("tangency", out)

    def test_subcommands(self):
        """Test every utility is registered"""
        parser = build_parser()
        for name in ("tangency", "barrier", "slice", "verify", "acc", "export"):
            args = parser.parse_args([name])
            self.assertEqual(name, args.utility)

    def test_usage_errors(self):
        """Test usage errors exit with code 2"""
        code, _, err = _run(["barrier", "--system", "unknown"])
        self.assertEqual(2, code)
        self.assertIn("unknown system", err)
        code, _, _ = _run(["tangency", "--bogus"])
        self.assertEqual(2, code)
        code, _, err = _run(["slice", "--system", "linear"])
        self.assertEqual(2, code)
        self.assertIn("only available for the acc system", err)
        code, _, _ = _run(["tangency", "--values", "ten"])
        self.assertEqual(2, code)

    def test_tangency(self):
        """Test the tangency document"""
        code, out, _ = _run(["tangency", "--constraint", "1", "--values", "10"])
        self.assertEqual(0, code)
        data = json.loads(out)
        self.assertEqual("acc", data["system"])
        self.assertEqual(1, data["constraint"])
        (scan,) = data["scans"]
        self.assertEqual([10.0], scan["parameter"])
        self.assertIsNone(scan["failure"])
        self.assertAlmostEqual(11.87, scan["points"][0]["z"][1], delta=0.01)

    def test_tangency_missing_root(self):
        """Test parameter values without roots are listed as failures"""
        code, out, _ = _run(["tangency", "--values", "1e4"])
        self.assertEqual(0, code)
        (scan,) = json.loads(out)["scans"]
        self.assertEqual([], scan["points"])
        self.assertTrue(scan["failure"].startswith("NoRoot"))

    def test_verify(self):
        """Test generic checks run on the linear system and write reports"""
        with tempfile.TemporaryDirectory() as tmp:
            argv = ["verify", "--system", "linear", "--out", tmp, "--needle-specs", "3"]
            code, out, _ = _run(argv + ["--check", "jacobian", "--check", "scaling"])
            self.assertEqual(0, code)
            self.assertEqual({"jacobian": True, "scaling": True}, json.loads(out))
            with open(os.path.join(tmp, "verify", "scaling.json"), encoding="utf-8") as fin:
                report = json.load(fin)
            self.assertTrue(report["passed"])
            self.assertEqual(3, len(report["results"]))

    def test_verify_needs_acc(self):
        """Test barrier checks are refused for other systems"""
        with tempfile.TemporaryDirectory() as tmp:
            argv = ["verify", "--system", "linear", "--out", tmp, "--check", "hamiltonian"]
            code, _, err = _run(argv)
            self.assertEqual(2, code)
            self.assertIn("only available for the acc system", err)

    def test_slice_status(self):
        """Test exit codes for slices that break a recorded check"""
        checks = {
            "max_hamiltonian": 0.0,
            "closure_gap": 0.0,
            "branch_inputs": [True, True],
            "tangency_residuals": [1e-12, 0.0],
        }

        def status(**changes):
            res = SliceResult(10.0, "ok", checks=dict(checks, **changes))
            failed = SliceResult(20.0, "failed", "NoRoot: no headway tangency point")
            return slice_status(PipelineResult(AccParameters(), RunConfig(), [res, failed]))

        self.assertEqual(EXIT_OK, status())
        self.assertEqual(EXIT_FAILURE, status(branch_inputs=[True, False]))
        self.assertEqual(EXIT_FAILURE, status(tangency_residuals=[1e-6, 0.0]))
        self.assertEqual(EXIT_FAILURE, status(max_hamiltonian=1.0))
        self.assertEqual(EXIT_FAILURE, status(closure_gap=1.0))
