"""Command-line entry point.

Exit status: 0 on success, 1 on a configuration error, 2 when an
acceptance check fails.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import DEFAULT_EXPERIMENT, EXPERIMENTS, ConfigError, load_config

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_ACCEPTANCE = 2


def _common(p: argparse.ArgumentParser, config_required: bool) -> None:
    p.add_argument("--config", required=config_required, help="TOML experiment configuration")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--trials", type=int, help="number of trials (overrides the config)")
    p.add_argument("--out", help="output directory for CSV and JSON records")
    p.add_argument("--workers", type=int, help="worker threads")
    p.add_argument("--profile", choices=("quick", "full"), default="full", help="trial budget for verify")


class _Parser(argparse.ArgumentParser):
    """Usage errors are configuration errors (status 1), not acceptance failures."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="peakfield", description="Monte Carlo experiments on Gaussian field suprema")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, exp in DEFAULT_EXPERIMENT.items():
        kinds = ", ".join(k for k, v in EXPERIMENTS.items() if v == name)
        p = sub.add_parser(name, help=f"run a configured experiment ({kinds}; default {exp})")
        _common(p, config_required=True)
    p = sub.add_parser("verify", help="run the acceptance suite")
    _common(p, config_required=False)
    return parser


def _verify(args) -> int:
    from .acceptance import verify_all

    seed = 20240601 if args.seed is None else args.seed
    if seed < 0:
        raise ConfigError("--seed", "must be non-negative")
    if args.workers is not None:
        if args.workers < 1:
            raise ConfigError("--workers", "must be >= 1")
        from ..parallel import set_workers

        set_workers(args.workers)
    results = verify_all(args.profile, seed, args.out)
    passed = sum(r.passed for r in results)
    print(f"{passed}/{len(results)} criteria passed ({args.profile} profile)")
    return EXIT_OK if passed == len(results) else EXIT_ACCEPTANCE


def _experiment(args) -> int:
    from .runner import run

    cfg = load_config(args.config, DEFAULT_EXPERIMENT[args.command])
    if EXPERIMENTS[cfg.experiment] != args.command:
        raise ConfigError("experiment", f"{cfg.experiment!r} belongs to the {EXPERIMENTS[cfg.experiment]!r} subcommand")
    cfg = cfg.with_overrides(seed=args.seed, trials=args.trials, out=args.out, workers=args.workers)
    out = Path(cfg.out)
    if not out.is_absolute() and args.out is None:
        out = Path(cfg.base_dir) / out
    record = run(cfg, out)
    for row in record.estimates:
        ci = "" if row["ci_low"] is None else f"  [{row['ci_low']:.6g}, {row['ci_high']:.6g}]"
        print(f"{row['estimate']:<40s} {row['value']!s:>14}{ci}")
    for name, ok in record.checks.items():
        print(f"check {name}: {'pass' if ok else 'FAIL'}")
    print(f"wrote {out / cfg.label()}.csv and .json")
    return EXIT_OK if record.passed else EXIT_ACCEPTANCE


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "verify":
            return _verify(args)
        return _experiment(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
