#!/usr/bin/env python3
"""
Trace barrier trajectories backward from tangency points.
"""
import argparse
import logging
import sys

from ..barrier import trace_barrier, trace_barrier_reparam
from ..exceptions import BarrierKitException
from ..export import ResultWriter
from ..tangency import filter_candidates, find_tangency_points
from .common import (
    EXIT_FAILURE,
    EXIT_OK,
    CliUtility,
    add_common_arguments,
    build_system,
    print_json,
    resolve_config,
    run_utility,
)
from .tangency import add_tangency_arguments, scan_values

logger = logging.getLogger(__name__)


class Barrier(CliUtility):
    """CLI utility tracing barrier trajectories"""

    def setup_parser(self, parser: argparse.ArgumentParser) -> None:
        """Read CLI arguments"""
        parser.description = "trace barrier trajectories and write them as CSV"
        add_common_arguments(parser)
        add_tangency_arguments(parser)
        parser.add_argument(
            "--coordinate",
            type=int,
            help="1-based state coordinate used as the independent variable instead of time",
        )

    def main(self, args) -> int:
        """barrier CLI entrypoint"""
        config = resolve_config(args, constraint=args.constraint)
        sys_ = build_system(config)
        settings = config.barrier
        scans = find_tangency_points(
            sys_,
            config.constraint,
            scan_values(args, config),
            (args.free - 1,),
            scan_points=args.scan_points,
            threads=config.threads,
        )
        points = [tp for scan in scans for tp in scan.points]
        candidates = filter_candidates(sys_, points, config.probe_len, settings)

        summary = []
        status = EXIT_OK
        with ResultWriter(config.out, ("csv",)) as writer:
            for k, tp in enumerate(candidates.accepted):
                entry = {"origin": tp.z.tolist(), "constraint": tp.active_index}
                try:
                    if args.coordinate is None:
                        traj = trace_barrier(sys_, tp, settings)
                    else:
                        traj = trace_barrier_reparam(
                            sys_, tp, settings, args.coordinate - 1, fallback=True
                        )
                except BarrierKitException as exc:
                    logger.warning("trace failed: %s", exc, extra={"origin": tp.z.tolist()})
                    entry["error"] = f"{type(exc).__name__}: {exc}"
                    status = EXIT_FAILURE
                else:
                    path = f"barriers/g{tp.active_index}_{k}.csv"
                    writer.write_trajectory(path, traj)
                    entry.update(
                        file=path,
                        samples=len(traj),
                        termination=traj.termination.name,
                        parameterization=traj.parameterization,
                        max_hamiltonian=traj.max_hamiltonian,
                        endpoint=traj.endpoint.tolist(),
                    )
                summary.append(entry)
        print_json(
            {
                "barriers": summary,
                "discarded": [
                    dict(tp.to_dict(), reason=reason) for tp, reason in candidates.discarded
                ],
            }
        )
        return status


if __name__ == "__main__":
    sys.exit(run_utility(Barrier))
