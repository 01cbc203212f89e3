#!/usr/bin/env python3
""" Shared barrierkit CLI entrypoint """
import argparse
import logging
import sys
from typing import Optional, Sequence

from ..exceptions import BarrierKitException, ConfigError
from ..log import configure_logging
from .acc import Acc
from .barrier import Barrier
from .common import EXIT_FAILURE, EXIT_OK, EXIT_USAGE
from .export import Export
from .slice import Slice
from .tangency import Tangency
from .verify import Verify

UTILITIES = (
    Tangency,
    Barrier,
    Slice,
    Verify,
    Acc,
    Export,
)


def build_parser() -> argparse.ArgumentParser:
    """Parser with one subcommand per utility."""
    parser = argparse.ArgumentParser(prog="barrierkit")
    subparsers = parser.add_subparsers(dest="utility", help="which utility to use")
    for utility in UTILITIES:
        utility().setup_parser(subparsers.add_parser(utility.__name__.lower()))
    return parser


def run(argv: Optional[Sequence[str]] = None) -> int:
    """Run the CLI on `argv` and return the exit code: 0 on success, 1 when a
    checked property fails and 2 on usage errors."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE

    if args.utility is None:
        parser.print_help()
        return EXIT_OK

    util = next(u for u in UTILITIES if u.__name__.lower() == args.utility)()
    del args.utility
    handler = configure_logging(args.log_level)
    try:
        return util.main(args)
    except ConfigError as exc:
        print(f"barrierkit: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except BarrierKitException as exc:
        print(f"barrierkit: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    finally:
        logging.getLogger("barrierkit").removeHandler(handler)


def main() -> int:
    """Shared CLI entrypoint for all barrierkit utilities"""
    return run(sys.argv[1:])


if __name__ == "__main__":
    sys.exit(main())
