"""Command-line front door.

Subcommands::

    rodlab run   <scenario-file> [--output-dir D] [--seed S] [--stride K]
                 [--threads N] [--no-plot]
    rodlab sweep <scenario-file> --axis <key> --values v1,v2,... [...]
    rodlab suite <scenario-file> [...]

Environment overrides: RODLAB_OUTPUT_DIR (output directory),
RODLAB_THREADS (worker count for sweep rows).
Exit codes: 0 success, 2 config error, 3 numerical failure,
4 acceptance-threshold failure.
"""
from __future__ import annotations

import argparse
import os
import sys

from .errors import ScenarioError
from .runner import EXIT_CONFIG, execute, sweep
from .scenario import load_scenario


def _common_flags(sub):
    sub.add_argument("scenario", help="scenario file")
    sub.add_argument("--output-dir", default=None, help="override output directory")
    sub.add_argument("--seed", type=int, default=None, help="override RNG seed")
    sub.add_argument("--stride", type=int, default=None, help="override output stride")
    sub.add_argument("--threads", type=int, default=None, help="worker threads for sweeps")
    sub.add_argument("--no-plot", action="store_true", help="skip figure rendering")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rodlab", description=__doc__.splitlines()[0])
    subs = parser.add_subparsers(dest="command", required=True)
    run_p = subs.add_parser("run", help="run one scenario")
    _common_flags(run_p)
    sweep_p = subs.add_parser("sweep", help="run a scenario across parameter values")
    _common_flags(sweep_p)
    sweep_p.add_argument("--axis", required=True, help="parameter or config key to sweep")
    sweep_p.add_argument("--values", required=True, help="comma-separated values")
    suite_p = subs.add_parser("suite", help="run the acceptance suite scenario")
    _common_flags(suite_p)
    return parser


def _parse_values(raw: str):
    vals = []
    for part in raw.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            vals.append(int(part))
        except ValueError:
            try:
                vals.append(float(part))
            except ValueError:
                vals.append(part)
    return vals


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    output_dir = args.output_dir or os.environ.get("RODLAB_OUTPUT_DIR")
    threads = args.threads
    if threads is None and os.environ.get("RODLAB_THREADS"):
        threads = int(os.environ["RODLAB_THREADS"])
    try:
        scenario = load_scenario(args.scenario)
    except ScenarioError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"cannot read scenario: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    if args.command == "suite" and scenario.experiment != "full-suite":
        print("suite command requires a full-suite scenario", file=sys.stderr)
        return EXIT_CONFIG

    common = dict(
        output_dir=output_dir,
        seed=args.seed,
        stride=args.stride,
        threads=threads,
        plot=not args.no_plot,
    )
    if args.command == "sweep":
        result = sweep(scenario, args.axis, _parse_values(args.values), **common)
    else:
        result = execute(scenario, **common)

    if result.error:
        print(f"error: {result.error}", file=sys.stderr)
    else:
        for path in result.artifacts:
            print(path)
    return result.status


if __name__ == "__main__":
    sys.exit(main())
