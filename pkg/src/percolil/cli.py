"""Command-line entry point: ``percolil <experiment> [options]``.

Exit codes: 0 success, 1 invalid configuration, 2 runtime failure,
3 too many failed trials.
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import __version__
from .runner import (
    EXPERIMENTS,
    FORMATS,
    ConfigError,
    ExcessiveFailures,
    RunConfig,
    build_config,
    emit,
    load_config_file,
    run_batch,
)

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_FAILURES = 0, 1, 2, 3

ALL = EXPERIMENTS

# flag name -> (config key, type, help, experiments)
FLAGS = {
    "--p": ("p", float, "bond probability in (0, 1]", ALL),
    "--d": ("d", int, "dimension", ALL),
    "--l": ("L", int, "box half-width: sites [-L, L]^d (default depends on the experiment)", ALL),
    "--boundary": ("boundary", str, "torus or free", ALL),
    "--bonds": ("bonds", str, "reuse a bond file instead of sampling an environment",
                ("walk", "lil", "heatkernel", "tail")),
    "--max-attempts": ("max_attempts", int, "conditioning attempts before giving up", ALL),
    "--min-trials": ("min_trials", int, "uncensored trials needed per estimate", ("lil",)),
    "--steps": ("steps", int, "jumps per trial", ("walk", "alpha")),
    "--walk": ("walk", str, "walk written to the checkpoint CSV: ctsrw, blind or myopic", ("lil",)),
    "--q": ("q", float, "checkpoint ratio (> 1)", ("lil",)),
    "--t0": ("t0", float, "first checkpoint (> e)", ("lil",)),
    "--horizon": ("horizon", float, "last checkpoint", ("lil",)),
    "--gamma": ("gamma", float, "increment threshold factor", ("lil",)),
    "--kappa": ("kappa", float, "annulus ratio (> 1)", ("lil",)),
    "--t": ("t", float, "time (jumps for the myopic walk)", ("heatkernel",)),
    "--heat-walk": ("heat_walk", str, "myopic or ctsrw", ("heatkernel",)),
    "--binning": ("binning", str, "site or shell", ("heatkernel",)),
    "--min-hits": ("min_hits", int, "hits needed to admit a bin", ("heatkernel",)),
    "--block-size": ("block_size", int, "walkers per random stream block", ("heatkernel",)),
    "--r-min": ("r_min", int, "smallest ball radius", ("volume",)),
    "--r-max": ("r_max", int, "largest ball radius", ("volume",)),
    "--n": ("n", float, "time horizon", ("tail",)),
    "--gammas": ("gammas", str, "comma-separated increasing grid", ("tail",)),
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError("arguments", message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="percolil", description="Random walks on percolation clusters: LIL statistics and friends.")
    parser.add_argument("--version", action="version", version=f"percolil {__version__}")
    sub = parser.add_subparsers(dest="experiment", required=True, parser_class=_Parser)
    for name in EXPERIMENTS:
        p = sub.add_parser(name, argument_default=argparse.SUPPRESS)
        p.add_argument("--config", help="JSON file of parameters (a previous result file also works)")
        p.add_argument("--seed", type=int, help="master seed")
        p.add_argument("--trials", type=int, help="independent trials (walkers for heatkernel)")
        p.add_argument("--threads", type=int, help="thread budget (default $PERCOLIL_THREADS or the CPU count)")
        p.add_argument("--out", help="output path (default: stdout)")
        p.add_argument("--format", choices=FORMATS, help="json or csv")
        p.add_argument("-v", "--verbose", action="store_true", help="progress on stderr")
        for flag, (key, kind, text, where) in FLAGS.items():
            if name in where:
                p.add_argument(flag, dest=key, type=kind, help=text)
    return parser


def parse_config(argv=None) -> RunConfig:
    """CLI flags over config-file values over defaults; returns the resolved config."""
    args = vars(build_parser().parse_args(argv))
    experiment = args.pop("experiment")
    path = args.pop("config", None)
    args.pop("verbose", None)
    file_values = load_config_file(path) if path else {}
    file_values.pop("experiment", None)
    return build_config(experiment, args, file_values)


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    logging.basicConfig(level=logging.INFO if ("-v" in argv or "--verbose" in argv) else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        config = parse_config(argv)
    except ConfigError as err:
        print(f"percolil: invalid configuration: {err}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        result = run_batch(config)
        emit(result, config.format, config.out)
    except ConfigError as err:
        print(f"percolil: invalid configuration: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except ExcessiveFailures as err:
        print(f"percolil: {err}", file=sys.stderr)
        return EXIT_FAILURES
    except Exception as err:
        print(f"percolil: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
