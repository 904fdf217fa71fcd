"""Command line entry point: ``ccot run | sweep | reproduce | paths``.

Exit status is 0 on success, 2 for configuration problems (including an
infeasible delta) and 3 for numerical failures.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .config import FIGURES, Config, load_config
from .exceptions import ConfigError, InfeasibleError, NumericalError
from .pipeline import reproduce, run_experiment, run_paths, run_sweep

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

logger = logging.getLogger("ccot")


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", metavar="DIR", default="ccot_out",
                        help="output directory (default: ./ccot_out)")
    common.add_argument("--seed", type=int, metavar="INT", default=None,
                        help="override samples.seed from the config")
    common.add_argument("--quiet", action="store_true", help="only log warnings and errors")

    with_config = argparse.ArgumentParser(add_help=False)
    with_config.add_argument("--config", metavar="PATH", default=None,
                             help="JSON config, or a manifest.json from an earlier run")

    parser = argparse.ArgumentParser(
        prog="ccot", description="Collective counterfactual explanations via optimal transport.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common, with_config], help="run one configured experiment")
    sweep = sub.add_parser("sweep", parents=[common, with_config],
                           help="unbalanced solves over a list of lambda2 values")
    sweep.add_argument("--values", type=float, nargs="+", metavar="L2", default=None,
                       help="lambda2 values (default: config sweep.lambda2 or 0, 0.1, ..., 1)")
    rep = sub.add_parser("reproduce", parents=[common], help="run a pinned figure preset")
    rep.add_argument("figure", choices=FIGURES + ("all",))
    sub.add_parser("paths", parents=[common, with_config],
                   help="back-and-forth map plus displacement-interpolation frames")
    return parser


def _config(args) -> Config:
    cfg = load_config(args.config) if args.config else Config()
    return cfg.with_seed(args.seed)


def _dispatch(args) -> None:
    if args.command == "run":
        m = run_experiment(_config(args), args.out)
        _report(args, m["metrics"])
    elif args.command == "sweep":
        m = run_sweep(_config(args), args.out, args.values)
        _report(args, {"rows": len(m["table"]), "baseline_cost": m["metrics"]["baseline_cost"]})
    elif args.command == "paths":
        m = run_paths(_config(args), args.out)
        _report(args, m["metrics"])
    else:
        figures = FIGURES if args.figure == "all" else (args.figure,)
        for fig in figures:
            summary = reproduce(fig, args.out, args.seed)
            _report(args, {fig: sorted(summary["runs"])})


def _report(args, payload) -> None:
    if not args.quiet:
        print(json.dumps(payload, indent=2, sort_keys=True, default=str))


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _dispatch(args)
    except (ConfigError, InfeasibleError) as err:
        logger.error("%s", err)
        return EXIT_CONFIG
    except NumericalError as err:
        logger.error("numerical failure: %s", err)
        return EXIT_NUMERICAL
    except ValueError as err:
        logger.error("invalid input: %s", err)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
