"""Command line entry point: ``copulacast <command> --config run.toml``.

Exit status: 0 success, 2 configuration error, 3 data error, 4 numerical
failure, 5 artifact lineage error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from ..errors import CopulacastError
from .config import parse_config
from . import stages

logger = logging.getLogger("copulacast")

# commands that draw random numbers and therefore need --seed
GENERATING = {"synth", "fit", "copula", "scenarios", "backtest"}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="copulacast",
        description="Quantile forecasts and Gaussian-copula scenario generation for power-system time series.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "synth": "write a synthetic cross-correlated AR(1) panel to the configured data paths",
        "fit": "fit the linear quantile model on the training range",
        "copula": "estimate the spatio-temporal correlation matrix from training PITs",
        "scenarios": "write quantile forecasts and scenarios for the test origins",
        "score": "score forecasts and scenarios against the actuals",
        "backtest": "fit, estimate, simulate and score every split and model variant",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text, description=text)
        p.add_argument("--config", required=True, help="TOML run configuration")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override one config value (repeatable)")
        p.add_argument("--seed", type=int, required=name in GENERATING,
                       help="root seed" + (" (required)" if name in GENERATING else ""))
        p.add_argument("--workers", type=int, default=None,
                       help="max parallel workers for scenario sampling (default: available cores)")
        p.add_argument("-v", "--verbose", action="count", default=0)
    return parser


def _run(args) -> int:
    cfg = parse_config(args.config, args.overrides, check_files=args.command != "synth", seed=args.seed)
    workers = args.workers or cfg["run"]["workers"] or os.cpu_count() or 1
    if args.command == "synth":
        panel, _, _ = stages.run_synth(cfg)
        print(f"wrote {panel.n_series} x {panel.n_times} panel to {cfg['data']['targets']}")
    elif args.command == "fit":
        model, path = stages.run_fit(cfg)
        print(f"wrote {path} (final training loss {min(model.history):.6g})")
    elif args.command == "copula":
        cop = stages.run_copula(cfg)
        print(f"wrote copula of dimension {cop.d} to {cfg.output_dir}")
    elif args.command == "scenarios":
        origins, _, scen = stages.run_scenarios(cfg, workers=workers)
        print(f"wrote {scen.shape[1]} scenarios for {len(origins)} origins to {cfg.output_dir}")
    elif args.command == "score":
        report = stages.run_score(cfg)
        for row in report.csv_rows():
            print(",".join(map(str, row)))
        for flag in report.flags:
            logger.warning("%s", flag)
    elif args.command == "backtest":
        result = stages.run_backtest(cfg, workers=workers)
        for row in result.table:
            print(",".join(map(str, row)))
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return _run(args)
    except CopulacastError as exc:
        print(f"copulacast {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
