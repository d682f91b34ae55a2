"""``cardio-nlsolve`` command line.

Exit codes: 0 all runs converged, 2 usage or configuration error,
3 at least one nonlinear solve hit max_it (recorded in the CSVs).
"""
from __future__ import annotations

import argparse
import sys

from ..errors import ConfigurationError, SchemaError
from ..nsolve import METHODS
from . import config as C
from .experiments import EXPERIMENTS, run_experiment
from .svg import PLOT_KINDS, emit_svg

EXIT_OK, EXIT_USAGE, EXIT_NONCONVERGED = 0, 2, 3

# Option-database style flags and the config keys they set.
SOLVER_FLAGS = {
    "--snes-type": "snes.type",
    "--snes-qn-m": "snes.qn_m",
    "--snes-ncg-type": "snes.ncg_type",
    "--snes-ngmres-m": "snes.ngmres_m",
    "--snes-ksp-ew-rtol": "snes.ew_rtol0",
    "--snes-atol": "snes.atol",
    "--snes-rtol": "snes.rtol",
    "--snes-max-it": "snes.max_it",
    "--ksp-rtol": "ksp.rtol",
    "--ksp-max-it": "ksp.max_it",
    "--pc-type": "pc.type",
}


def _epilog() -> str:
    lines = ["experiments:"]
    lines += [f"  {k}: {v}" for k, v in EXPERIMENTS.items()]
    lines += ["", "solver flags map to config keys:"]
    lines += [f"  {flag} -> {key}" for flag, key in SOLVER_FLAGS.items()]
    lines += ["", f"methods: {', '.join(METHODS)}", "", "config keys and defaults:", C.describe_defaults()]
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cardio-nlsolve",
        description="Nonlinear Bidomain solver experiments",
        epilog=_epilog(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run an experiment suite", epilog=_epilog(),
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    r.add_argument("--experiment", required=True, choices=sorted(EXPERIMENTS))
    r.add_argument("--config", help="flat key = value file")
    r.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    r.add_argument("--out", required=True)
    for flag in SOLVER_FLAGS:
        r.add_argument(flag, dest=flag.lstrip("-").replace("-", "_"))
    p = sub.add_parser("plot", help="render CSVs to SVG")
    p.add_argument("--kind", required=True, choices=PLOT_KINDS)
    p.add_argument("--out", required=True)
    p.add_argument("csv", nargs="+")
    return parser


def collect_overrides(args) -> dict:
    layers = {}
    if args.config:
        layers.update(C.read_config_file(args.config))
    layers.update(C.parse_assignments(args.set, "--set"))
    flags = []
    for flag, key in SOLVER_FLAGS.items():
        val = getattr(args, flag.lstrip("-").replace("-", "_"))
        if val is not None:
            flags.append(f"{key} = {val}")
    layers.update(C.parse_assignments(flags, "flags"))
    return layers


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "plot":
            path = emit_svg(args.csv, args.kind, args.out)
            print(path)
            return EXIT_OK
        overrides = collect_overrides(args)
        result = run_experiment(args.experiment, overrides, args.out)
    except (ConfigurationError, SchemaError) as exc:
        print(f"cardio-nlsolve: error: {exc}", file=sys.stderr)
        if isinstance(exc, ConfigurationError):
            print("valid keys and defaults:\n" + C.describe_defaults(), file=sys.stderr)
        return EXIT_USAGE
    for f in result.files:
        print(f)
    if not result.converged:
        print("cardio-nlsolve: some nonlinear solves did not converge (see CSV headers)", file=sys.stderr)
        return EXIT_NONCONVERGED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
