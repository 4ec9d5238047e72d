"""Command-line front end.

Exit codes: 0 when every CAV solved and every audit passed, 2 when a CAV
was infeasible or an audit failed (the trace lands in audit.txt), 1 for
file or configuration problems.
"""
from __future__ import annotations

import argparse
import os
import sys

from .fixtures import FIXTURES, fixture
from .model import ConfigError, DomainError
from .sim import apply_overrides, load_scenario, run_simulation, write_outputs


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cavcross",
        description="Signal-free intersection crossing: solve scenarios and "
                    "write trajectory, summary, and audit tables.")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="solve a scenario file or built-in fixture")
    run.add_argument("scenario", nargs="?", default=None,
                     help="scenario JSON path (or use --fixture)")
    run.add_argument("--fixture", choices=sorted(FIXTURES), metavar="NAME",
                     help="built-in scenario: " + ", ".join(sorted(FIXTURES)))
    run.add_argument("--out", default="out", help="output directory (default: out)")
    run.add_argument("--seed", type=int, default=None,
                     help="override scenario seed")
    run.add_argument("--gamma", type=float, default=None,
                     help="override time weight")
    run.add_argument("--oracle", action="store_true", default=None,
                     help="also run the direct-transcription cross-check per CAV")
    run.add_argument("--sample-step", type=float, default=None,
                     help="trajectory table sampling step [s]")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse uses 2 for usage errors; keep 2 for infeasible solves only
        return 0 if exc.code == 0 else 1

    try:
        if args.fixture is not None and args.scenario is not None:
            raise ConfigError("give either a scenario path or --fixture, not both")
        if args.fixture is not None:
            source, label = fixture(args.fixture), args.fixture
        elif args.scenario is not None:
            source = args.scenario
            label = os.path.splitext(os.path.basename(args.scenario))[0]
        else:
            raise ConfigError("a scenario path or --fixture is required")
        scenario = load_scenario(source)
        scenario = apply_overrides(scenario, gamma=args.gamma, seed=args.seed,
                                   sample_step=args.sample_step,
                                   oracle=args.oracle)
    except (ConfigError, DomainError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    result = run_simulation(scenario)
    paths = write_outputs(result, args.out, label)
    solved = sum(1 for r in result.runs if r.trajectory is not None)
    print(f"{label}: {solved}/{len(result.runs)} CAVs solved, "
          f"{'all checks passed' if result.ok else 'FAILED: ' + str(result.failure)} "
          f"({result.wall_time:.2f}s)")
    for name in ("trajectories", "summary", "audit"):
        print(f"  {paths[name]}")
    if not result.ok:
        print(f"see {paths['audit']} for the trace", file=sys.stderr)
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
