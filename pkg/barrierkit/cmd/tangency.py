#!/usr/bin/env python3
"""
Find ultimate tangentiality points of one constraint.
"""
import argparse
import sys

from ..tangency import find_tangency_points
from .common import (
    EXIT_OK,
    CliUtility,
    add_common_arguments,
    build_system,
    float_list,
    print_json,
    resolve_config,
    run_utility,
)


def add_tangency_arguments(parser: argparse.ArgumentParser) -> None:
    """Arguments selecting which tangency points to look for."""
    parser.add_argument(
        "--constraint", "-i", type=int, help="1-based index of the constraint to touch"
    )
    parser.add_argument(
        "--values",
        type=float_list,
        help="comma separated values of the fixed coordinate (default: configured z1 or 10)",
    )
    parser.add_argument(
        "--free",
        type=int,
        default=1,
        help="1-based state coordinate held fixed at each value (default: 1)",
    )
    parser.add_argument(
        "--scan-points", type=int, default=400, help="scan resolution of the root search"
    )


def scan_values(args, config) -> list:
    """Values of the fixed coordinate to scan."""
    if args.values:
        return args.values
    return list(config.z1) if config.z1 else [10.0]


class Tangency(CliUtility):
    """CLI utility listing tangency points"""

    def setup_parser(self, parser: argparse.ArgumentParser) -> None:
        """Read CLI arguments"""
        parser.description = "find points where the reachable velocities touch a constraint"
        add_common_arguments(parser)
        add_tangency_arguments(parser)

    def main(self, args) -> int:
        """tangency CLI entrypoint"""
        config = resolve_config(args, constraint=args.constraint)
        sys_ = build_system(config)
        scans = find_tangency_points(
            sys_,
            config.constraint,
            scan_values(args, config),
            (args.free - 1,),
            scan_points=args.scan_points,
            threads=config.threads,
        )
        print_json(
            {
                "system": config.system,
                "constraint": config.constraint,
                "scans": [scan.to_dict() for scan in scans],
            }
        )
        return EXIT_OK


if __name__ == "__main__":
    sys.exit(run_utility(Tangency))
