#!/usr/bin/env python3
"""
Build admissible set slices at chosen leader speeds.
"""
import argparse
import sys

from ..acc import PipelineResult, acc_slice, acc_system
from ..config import parallel_map
from ..export import ResultWriter
from .acc import acc_parameters, add_slice_arguments, slice_status, write_slices
from .common import (
    CliUtility,
    add_common_arguments,
    print_json,
    require_acc,
    resolve_config,
    run_utility,
)


class Slice(CliUtility):
    """CLI utility building individual slices"""

    def setup_parser(self, parser: argparse.ArgumentParser) -> None:
        """Read CLI arguments"""
        parser.description = "build admissible set slices and print their summaries"
        add_common_arguments(parser)
        add_slice_arguments(parser)

    def main(self, args) -> int:
        """slice CLI entrypoint"""
        config = resolve_config(
            args,
            z1=args.z1,
            formats=args.format,
            probe_len=args.probe_len,
            stitch_tol=args.stitch_tol,
            boundary_points=args.boundary_points,
        )
        require_acc(config, "slice assembly")
        p = acc_parameters(config, args.nominal)
        sys_ = acc_system(p)
        values = list(config.z1) if config.z1 else [10.0]
        slices = parallel_map(lambda z1: acc_slice(p, z1, config, sys_), values, config.threads)
        with ResultWriter(config.out, config.formats) as writer:
            write_slices(writer, slices)
        print_json([res.to_dict() for res in slices])
        return slice_status(PipelineResult(p, config, slices))


if __name__ == "__main__":
    sys.exit(run_utility(Slice))
