"""Command-line entry point.

Subcommands: ``forward``, ``optimize``, ``verify``.  Exit codes: 0 on
success, 1 on a validation error (bad scenario or arguments), 2 on a
solver failure, 3 when a verification check fails.
"""

from __future__ import annotations

import argparse
import sys

from .forward import SolverError
from .runs import run_forward, run_optimize, run_verify
from .scenario_io import ScenarioError

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_SOLVER = 2
EXIT_VERIFICATION = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chemoctrl",
        description="Simulate, optimize and verify a 2D chemo-repulsion "
                    "system under bilinear control.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", required=True, help="scenario YAML file")
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--snapshot-stride", type=int, default=0, metavar="N",
                        help="write field snapshots every N levels (0 = none)")
    common.add_argument("--scheme", choices=["central", "upwind"], default=None,
                        help="override the chemotaxis face-value scheme")
    common.add_argument("--tol", type=float, default=None,
                        help="stationarity tolerance (optimize)")
    common.add_argument("--max-iters", type=int, default=None,
                        help="iteration cap (optimize)")

    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("forward", parents=[common],
                   help="integrate the state system and write diagnostics")
    sub.add_parser("optimize", parents=[common],
                   help="run projected-gradient descent on the tracking cost")
    sub.add_parser("verify", parents=[common],
                   help="run the conservation/adjoint checks; exit 3 on failure")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "forward":
            manifest = run_forward(args.scenario, args.out,
                                   snapshot_stride=args.snapshot_stride,
                                   scheme=args.scheme)
        elif args.command == "optimize":
            manifest = run_optimize(args.scenario, args.out,
                                    snapshot_stride=args.snapshot_stride,
                                    scheme=args.scheme, tol=args.tol,
                                    max_iters=args.max_iters)
        else:
            manifest = run_verify(args.scenario, args.out,
                                  scheme=args.scheme,
                                  snapshot_stride=args.snapshot_stride)
    except (ScenarioError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except FileExistsError as exc:
        print(f"error: output directory is locked by another run ({exc})",
              file=sys.stderr)
        return EXIT_VALIDATION
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER

    for key, val in sorted(manifest.convergence.items()):
        print(f"{key}: {val}")
    print(f"outputs: {len(manifest.outputs)} files in {args.out} "
          f"(content hash {manifest.content_hash[:16]}...)")
    if manifest.exit_status == 3:
        print("verification FAILED", file=sys.stderr)
    return manifest.exit_status


if __name__ == "__main__":
    sys.exit(main())
