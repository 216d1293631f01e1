"""Command-line entry point.

Subcommands: `simulate` runs a config end to end and writes the output
bundle, `validate` checks a config's schema, `dmax` prints the analytic
maximum throw distance. Exit codes: 0 success, 1 validation/usage error,
2 runtime error.
"""

import argparse
import sys

from . import scenario
from .config import load_config
from .errors import AerocommError, ConfigError, InvalidInputError
from .outputs import write_outputs
from .transport import max_throw_distance


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _build_parser():
    parser = _Parser(prog="aerocomm",
                     description="Airborne aerosol transmission simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a simulation end to end")
    sim.add_argument("--config", required=True, help="JSON config path")
    sim.add_argument("--out", required=True, help="output directory")
    sim.add_argument("--seed", type=int, default=None,
                     help="override the config seed")

    val = sub.add_parser("validate", help="check a config's schema only")
    val.add_argument("--config", required=True, help="JSON config path")

    dm = sub.add_parser("dmax", help="analytic maximum throw distance")
    dm.add_argument("--v", type=float, required=True, help="launch speed m/s")
    dm.add_argument("--h0", type=float, required=True, help="launch height m")
    dm.add_argument("--g", type=float, default=9.81,
                    help="gravitational acceleration m/s^2")
    return parser


def cli_main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else 1

    try:
        if args.command == "dmax":
            print(f"{max_throw_distance(args.v, args.h0, args.g):.3f}")
            return 0
        if args.command == "validate":
            load_config(args.config)
            print("ok")
            return 0
        if args.command == "simulate":
            config = load_config(args.config)
            if args.seed is not None:
                config.run.seed = args.seed
            if config.run.seed is None:
                print("error: run.seed: an explicit seed is required "
                      "(config or --seed)", file=sys.stderr)
                return 1
            result = scenario.run(config)
            bundle = write_outputs(result, args.out, config.analysis)
            for path in bundle.paths():
                print(path)
            return 0
    except (ConfigError, InvalidInputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except AerocommError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 1


def main():
    raise SystemExit(cli_main())


if __name__ == "__main__":
    main()
