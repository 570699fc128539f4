"""Command-line entry point: ``heom-qubit {evolve,steady,sweep,spectrum,verify}``.

Exit codes: 0 success, 1 numerical failure (including failed sweep points or
oracle checks), 2 configuration error.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys

from . import __version__
from .config import RUN_KINDS, TREATMENTS, DepthPolicy, ExperimentConfig, load_config, parse_config
from .errors import ConfigurationError, HeomError
from .experiments import run_experiment

EXIT_OK, EXIT_NUMERICAL, EXIT_CONFIG = 0, 1, 2
THREADS_ENV = "HEOM_QUBIT_THREADS"

log = logging.getLogger("heom_qubit")


def _depth(text: str):
    if text == "auto":
        return text
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"depth must be a non-negative integer or 'auto', got {text!r}") from None
    if value < 0:
        raise argparse.ArgumentTypeError("depth must be non-negative")
    return value


def _seed(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="heom-qubit",
        description="HEOM simulations of a qubit in a Lorentzian bath and a stochastic field.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for kind in RUN_KINDS:
        p = sub.add_parser(kind, help=f"run a '{kind}' experiment")
        p.add_argument("--config", help="TOML configuration, or an output CSV whose header embeds one")
        p.add_argument("--out", help="output directory (overrides [output] dir)")
        p.add_argument("--depth", type=_depth, help="hierarchy depth L or 'auto'")
        p.add_argument("--treatment", choices=TREATMENTS, help="restrict to one treatment")
        p.add_argument("--seed", type=_seed, help="Monte Carlo seed")
        p.add_argument("--threads", type=int, help=f"worker processes for sweeps (fallback: ${THREADS_ENV})")
        p.add_argument("--json", action="store_true", help="also write JSON mirrors")
        p.add_argument("--plot-script", action="store_true", help="write matplotlib scripts next to the CSVs")
        p.add_argument("-v", "--verbose", action="count", default=0)
    return parser


def resolve_threads(arg: int | None) -> int:
    if arg is not None:
        n = arg
    else:
        env = os.environ.get(THREADS_ENV)
        if env is None or env == "":
            return 1
        try:
            n = int(env)
        except ValueError:
            raise ConfigurationError(f"{THREADS_ENV} must be an integer, got {env!r}", key=THREADS_ENV) from None
    if n < 1:
        raise ConfigurationError("thread count must be >= 1", key="threads")
    return n


def apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    """Fold command-line flags into the configuration so output headers record them."""
    if args.depth is not None:
        fixed = None if args.depth == "auto" else args.depth
        cfg = dataclasses.replace(cfg, depth=dataclasses.replace(cfg.depth, fixed=fixed))
    if args.treatment is not None:
        cfg = dataclasses.replace(cfg, treatments=(args.treatment,))
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, monte_carlo=dataclasses.replace(cfg.monte_carlo, seed=args.seed))
    out = cfg.output
    if args.out is not None:
        out = dataclasses.replace(out, dir=args.out)
    if args.json:
        out = dataclasses.replace(out, json=True)
    if args.plot_script:
        out = dataclasses.replace(out, plot_script=True)
    return dataclasses.replace(cfg, output=out)


def load(args) -> ExperimentConfig:
    if args.config is None:
        cfg = parse_config(f'[run]\nkind = "{args.command}"\n')
    else:
        cfg = load_config(args.config)
    if cfg.kind != args.command:
        raise ConfigurationError(
            f"configuration is for '{cfg.kind}' but the '{args.command}' subcommand was used", key="run.kind"
        )
    if not isinstance(cfg.depth, DepthPolicy):  # pragma: no cover
        raise ConfigurationError("invalid depth policy", key="hierarchy.depth")
    return apply_overrides(cfg, args)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse uses 2 for usage errors already
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = load(args)
        threads = resolve_threads(args.threads)
    except (ConfigurationError, OSError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        outcome = run_experiment(cfg, threads=threads)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except HeomError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    for path in outcome.files:
        print(path)
    for check in outcome.checks:
        status = "PASS" if check.passed else "FAIL"
        print(f"{status} {check.name}: deviation {check.deviation:.3e} (tolerance {check.tolerance:.1e}) {check.detail}")
    for failure in outcome.failures:
        print(f"failed: {failure}", file=sys.stderr)
    return EXIT_OK if outcome.ok else EXIT_NUMERICAL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
