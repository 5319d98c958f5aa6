"""
    Command-line entry point: ``riiu <command> [options]``.

    Exit status is 0 on success, 1 for usage or configuration errors, 2 when
    a verification suite fails and 3 when training diverges.
"""

import argparse
import logging
import sys

from .._version import __version__
from ..errors import DivergenceError
from . import experiments
from .config import load_run_config

__all__ = ["main", "build_parser", "EXIT_OK", "EXIT_USAGE", "EXIT_PROPERTY", "EXIT_DIVERGENCE"]

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_PROPERTY = 2
EXIT_DIVERGENCE = 3

COMMANDS = {
    "train": "train one variant on every seed",
    "ablate-buffer": "compare history window lengths",
    "ablate-meta": "compare the unit with and without its reflexive network",
    "sweep-bonus": "compare Auto-Phi bonus weights",
    "verify": "run the gradient, compositionality and ascent-step property suites",
    "calibrate": "correlate Auto-Phi with the Gaussian integration oracle",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError("%s: %s" % (self.prog, message))


def _seed_list(text):
    try:
        seeds = tuple(int(s) for s in text.split(",") if s.strip())
    except ValueError:
        raise argparse.ArgumentTypeError("expected comma-separated integers, got %r" % text)
    if not seeds:
        raise argparse.ArgumentTypeError("no seeds given")
    return seeds


def build_parser():
    parser = _Parser(prog="riiu", description="Reflexive integrated-information units.")
    parser.add_argument("--version", action="version", version="%(prog)s " + __version__)
    sub = parser.add_subparsers(dest="cmd", required=True, parser_class=_Parser)
    for name, help_text in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--seed", type=_seed_list, dest="seeds", help="comma-separated seeds, e.g. 1,2,3")
        p.add_argument("--out", help="output directory")
        p.add_argument("--jobs", type=int, dest="n_jobs", help="parallel workers")
        p.add_argument("--episodes", type=int, help="episodes per run")
        if name == "train":
            p.add_argument("--variant", help="riiu, no_meta, gru or mlp")
        verbosity = p.add_mutually_exclusive_group()
        verbosity.add_argument("-v", "--verbose", action="store_true")
        verbosity.add_argument("-q", "--quiet", action="store_true")
    return parser


def _run(args):
    cfg = load_run_config(
        args.config,
        seeds=args.seeds,
        out=args.out,
        n_jobs=args.n_jobs,
        episodes=args.episodes,
        variant=getattr(args, "variant", None),
    )
    if args.cmd == "train":
        experiments.cmd_train(cfg)
    elif args.cmd == "ablate-buffer":
        experiments.cmd_ablate_buffer(cfg)
    elif args.cmd == "ablate-meta":
        experiments.cmd_ablate_meta(cfg)
    elif args.cmd == "sweep-bonus":
        experiments.cmd_sweep_bonus(cfg)
    elif args.cmd == "verify":
        results = experiments.cmd_verify(cfg)
        failed = [r.name for r in results if not r.passed]
        if failed:
            logger.error("property suites failed: %s", ", ".join(failed))
            return EXIT_PROPERTY
    elif args.cmd == "calibrate":
        summary = experiments.cmd_calibrate(cfg)
        logger.info("spearman correlation %.4f over %d systems", summary["spearman"], summary["n_systems"])
    return EXIT_OK


def main(argv=None):
    """Parse ``argv`` and run the command; returns the exit status."""
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE

    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="%(asctime)s %(name)s %(levelname)s %(message)s")

    try:
        return _run(args)
    except DivergenceError as exc:
        logger.error("training diverged: %s", exc)
        return EXIT_DIVERGENCE
    except (ValueError, OSError) as exc:
        logger.error("%s", exc)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
