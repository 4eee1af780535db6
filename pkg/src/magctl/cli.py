"""Command-line entry point: ``magctl <experiment> [--config PATH] [--out DIR] ...``."""
from __future__ import annotations

import argparse
import sys

from .harness.config import EXPERIMENTS, ConfigError, load_config
from .harness.experiments import run_experiment
from .harness.report import emit


def _formats(text: str) -> list[str]:
    return [f.strip() for f in text.split(",") if f.strip()]


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="magctl", description="Schedule synthesis experiments for magnetic "
                                 "Schroedinger control systems.")
    sub = ap.add_subparsers(dest="experiment", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", help="YAML config merged over the built-in defaults")
        p.add_argument("--out", help="output directory")
        p.add_argument("--kick-mode", help="ideal or pulsed:<eps>")
        p.add_argument("--seed", type=int, help="unsigned 64-bit seed")
        p.add_argument("--format", type=_formats, help="comma list of csv,json,svg")
        p.add_argument("--workers", type=int, help="threads for the rows of a sweep")
    return ap


def main(argv=None) -> int:
    """Run one experiment; exit status 0 when every pass flag holds, 1 otherwise, 2 on config errors."""
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.experiment, out=args.out, kick_mode=args.kick_mode, seed=args.seed,
                          formats=args.format, workers=args.workers)
    except (ConfigError, OSError) as exc:
        print(f"magctl: {exc}", file=sys.stderr)
        return 2
    report = run_experiment(cfg)
    paths = emit(report, cfg.formats, cfg.out, timing=cfg.record_timing)
    print(report.summary())
    for p in paths:
        print(f"wrote {p}")
    return 0 if report.passed else 1


if __name__ == "__main__":
    sys.exit(main())
