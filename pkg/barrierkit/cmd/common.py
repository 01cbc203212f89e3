""" Shared CLI definitions """

import abc
import argparse
import dataclasses
import sys
from typing import Any, List, Optional, Sequence, Type

from ..config import RunConfig
from ..exceptions import ConfigError
from ..export import dumps_json
from ..sysmodel import ControlSystem, get_system, read_system_file

#: Exit codes
EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


class CliUtility(metaclass=abc.ABCMeta):
    """Abstract utility base class"""

    @abc.abstractmethod
    def setup_parser(self, parser: argparse.ArgumentParser) -> None:
        """Allow the utility to set up its arg parser.

        Arguments:
            parser (argparse.ArgumentParser): the parser to setup arguments for.
        """

    @abc.abstractmethod
    def main(self, args) -> int:
        """Run utility with parsed args.

        Returns:
            The utility exit code
        """


def float_list(text: str) -> List[float]:
    """argparse type for comma separated floats"""
    try:
        return [float(item) for item in text.split(",") if item.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma separated numbers, got {text!r}") from exc


def add_common_arguments(parser: argparse.ArgumentParser) -> None:
    """Arguments every utility understands. Defaults of None leave the
    configured value alone."""
    parser.add_argument("--config", help="JSON run configuration file")
    parser.add_argument(
        "--params", help="JSON system file with system, params and box entries"
    )
    parser.add_argument("--system", help="registered system name")
    parser.add_argument("--seed", type=int, help="seed for every random sample")
    parser.add_argument("--threads", type=int, help="worker pool size")
    parser.add_argument("--out", help="output directory")
    parser.add_argument(
        "--log-level",
        default="WARNING",
        choices=("DEBUG", "INFO", "WARNING", "ERROR"),
        help="logging level of the JSON log written to standard error",
    )
    parser.add_argument("--atol", type=float, help="integrator absolute tolerance")
    parser.add_argument("--rtol", type=float, help="integrator relative tolerance")
    parser.add_argument("--max-step", type=float, help="integrator step bound")
    parser.add_argument("--horizon", type=float, help="largest backward trace time")
    parser.add_argument("--h-tol", type=float, help="largest tolerated Hamiltonian residual")
    parser.add_argument("--g-tol", type=float, help="constraint value tolerance")


def resolve_config(args: argparse.Namespace, **overrides: Any) -> RunConfig:
    """Resolve built-in defaults, then ``--config``, then the ``--params``
    system file, then command line flags.

    Raises:
        ConfigError: A file could not be read or holds invalid settings.
    """
    config = RunConfig.load(args.config) if args.config else RunConfig()
    if args.params:
        config = dataclasses.replace(config, **read_system_file(args.params))
    try:
        config = config.merge(
            system=args.system, seed=args.seed, threads=args.threads, out=args.out, **overrides
        )
        config = config.merge_barrier(
            atol=args.atol,
            rtol=args.rtol,
            max_step=args.max_step,
            horizon=args.horizon,
            h_tol=args.h_tol,
            g_tol=args.g_tol,
        )
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    return config


def build_system(config: RunConfig) -> ControlSystem:
    """The configured system."""
    return get_system(
        config.system,
        config.params,
        control_box=config.control_box,
        disturbance_box=config.disturbance_box,
    )


def require_acc(config: RunConfig, what: str) -> None:
    """Raise a usage error unless the configured system is ``acc``."""
    if config.system != "acc":
        raise ConfigError(f"{what} is only available for the acc system")


def print_json(data: Any, stream=None) -> None:
    """Write a deterministic JSON document to standard output."""
    (stream or sys.stdout).write(dumps_json(data))


def run_utility(utility: Type[CliUtility], argv: Optional[Sequence[str]] = None) -> int:
    """Run a single command line utility.

    Arguments:
        utility (type[CliUtility]): class of utility to run.
        argv (Sequence[str], optional): arguments, defaults to ``sys.argv``.

    Returns:
        The desired exit code
    """
    util = utility()
    parser = argparse.ArgumentParser()
    util.setup_parser(parser)
    return util.main(parser.parse_args(argv))
