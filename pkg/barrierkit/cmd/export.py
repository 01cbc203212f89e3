#!/usr/bin/env python3
"""
Re-export slice JSON documents in other formats.
"""
import argparse
import json
import sys
from typing import List

from ..assemble import AdmissibleSetSlice
from ..exceptions import ConfigError
from ..export import ResultWriter
from .common import EXIT_OK, CliUtility, print_json, run_utility


def read_slices(path: str) -> List[AdmissibleSetSlice]:
    """Slices from a JSON file holding one slice object or an array of them."""
    try:
        with open(path, "r", encoding="utf-8") as fin:
            data = json.load(fin)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"could not read slices from {path}: {exc}") from exc
    items = data if isinstance(data, list) else [data]
    try:
        return [AdmissibleSetSlice.from_dict(item) for item in items]
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{path} does not hold slices: {exc}") from exc


class Export(CliUtility):
    """CLI utility converting slice files"""

    def setup_parser(self, parser: argparse.ArgumentParser) -> None:
        """Read CLI arguments"""
        parser.description = "write slice JSON files as csv, json, svg or png"
        parser.add_argument("inputs", nargs="*", help="slice JSON files")
        parser.add_argument("--out", default="out", help="output directory")
        parser.add_argument(
            "--format",
            type=lambda text: tuple(item for item in text.split(",") if item),
            default=("csv", "json", "svg"),
            help="comma separated output formats",
        )
        parser.add_argument(
            "--log-level",
            default="WARNING",
            choices=("DEBUG", "INFO", "WARNING", "ERROR"),
            help="logging level of the JSON log written to standard error",
        )

    def main(self, args) -> int:
        """export CLI entrypoint"""
        slices = [slice_ for path in args.inputs for slice_ in read_slices(path)]
        try:
            writer = ResultWriter(args.out, args.format)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        with writer:
            for k, slice_ in enumerate(slices):
                writer.write_slice(k, slice_)
            writer.write_index(slices)
            writer.write_overview(slices)
        print_json({"out": args.out, "slices": len(slices), "files": writer.written})
        return EXIT_OK


if __name__ == "__main__":
    sys.exit(run_utility(Export))
