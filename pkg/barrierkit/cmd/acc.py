#!/usr/bin/env python3
"""
Slice the robust admissible set of the adaptive cruise control model.
"""
import argparse
import sys
from typing import Dict, Sequence

from ..acc import AccParameters, PipelineResult, SliceResult, acc_nominal_parameters, acc_pipeline
from ..config import RunConfig
from ..export import ResultWriter
from ..tangency import TANGENCY_TOL
from .common import (
    EXIT_FAILURE,
    EXIT_OK,
    CliUtility,
    add_common_arguments,
    float_list,
    print_json,
    require_acc,
    resolve_config,
    run_utility,
)


def add_slice_arguments(parser: argparse.ArgumentParser) -> None:
    """Arguments shared by the slicing utilities."""
    parser.add_argument("--z1", type=float_list, help="comma separated leader speeds")
    parser.add_argument(
        "--format",
        type=lambda text: tuple(item for item in text.split(",") if item),
        help="comma separated output formats out of csv, json, svg, png",
    )
    parser.add_argument(
        "--nominal",
        action="store_const",
        const=True,
        default=False,
        required=False,
        help="drop the disturbances to compute the nominal admissible set",
    )
    parser.add_argument("--probe-len", type=float, help="backward probe length of candidates")
    parser.add_argument("--stitch-tol", type=float, help="endpoint matching distance")
    parser.add_argument("--boundary-points", type=int, help="samples per constraint line")


def acc_parameters(config: RunConfig, nominal: bool) -> AccParameters:
    """Cruise control parameters from the configuration."""
    p = AccParameters.from_dict(config.params, config.control_box, config.disturbance_box)
    return acc_nominal_parameters(p) if nominal else p


def write_slices(writer: ResultWriter, slices: Sequence[SliceResult]) -> None:
    """Write every built slice and its barrier arcs."""
    for k, res in enumerate(slices):
        if res.slice is None:
            continue
        writer.write_slice(k, res.slice, f"slice z1={res.z1!r}")
        seen: Dict[str, int] = {}
        for arc in res.arcs:
            stem = f"g{arc.origin.active_index}_{k}"
            count = seen.get(stem, 0)
            seen[stem] = count + 1
            name = stem if count == 0 else f"{stem}_{count}"
            writer.write_trajectory(f"barriers/{name}.csv", arc)
    writer.write_overview([res.slice for res in slices if res.slice is not None])


def slice_status(result: PipelineResult) -> int:
    """Failure when a built slice breaks a checked invariant."""
    settings = result.config.barrier
    for res in result.slices:
        if res.status != "ok":
            continue
        if res.checks["max_hamiltonian"] > settings.h_tol:
            return EXIT_FAILURE
        if res.checks["closure_gap"] > result.config.stitch_tol:
            return EXIT_FAILURE
        if not all(res.checks["branch_inputs"]):
            return EXIT_FAILURE
        if any(residual > TANGENCY_TOL for residual in res.checks["tangency_residuals"]):
            return EXIT_FAILURE
    return EXIT_OK


class Acc(CliUtility):
    """CLI utility running the cruise control pipeline"""

    def setup_parser(self, parser: argparse.ArgumentParser) -> None:
        """Read CLI arguments"""
        parser.description = "compute admissible set slices of the cruise control model"
        add_common_arguments(parser)
        add_slice_arguments(parser)
        parser.add_argument("--grid", type=int, help="number of evenly spaced leader speeds")

    def main(self, args) -> int:
        """acc CLI entrypoint"""
        config = resolve_config(
            args,
            grid=args.grid,
            z1=args.z1,
            formats=args.format,
            probe_len=args.probe_len,
            stitch_tol=args.stitch_tol,
            boundary_points=args.boundary_points,
        )
        require_acc(config, "the acc pipeline")
        result = acc_pipeline(acc_parameters(config, args.nominal), config)
        manifest = result.manifest()
        manifest["nominal"] = args.nominal
        with ResultWriter(config.out, config.formats) as writer:
            write_slices(writer, result.slices)
            writer.write_json("manifest.json", manifest)
        print_json(
            {
                "out": config.out,
                "slices": len(result.slices),
                "failed": [res.z1 for res in result.failed],
            }
        )
        return slice_status(result)


if __name__ == "__main__":
    sys.exit(run_utility(Acc))
