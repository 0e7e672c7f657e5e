"""``gppde run --config <path> [--workers k] [--out <path>]``."""
from __future__ import annotations

import argparse
import sys

from .experiments import ConfigError, NumericalFailure, load_config, run_experiment

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2


def _summary(result: dict) -> str:
    parts = []
    for key, val in result.items():
        if isinstance(val, float):
            parts.append(f"{key}={val:.6g}")
        elif isinstance(val, list):
            parts.append(f"{key}=[{', '.join(f'{v:.4g}' if isinstance(v, float) else str(v) for v in val)}]")
        elif isinstance(val, dict):
            parts.append(f"{key}={{{', '.join(f'{k}: {v:.4g}' for k, v in val.items())}}}")
        else:
            parts.append(f"{key}={val}")
    return " ".join(parts)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gppde", description="Sparse-Cholesky Gaussian-process PDE experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run the experiment described by a JSON config file")
    run.add_argument("--config", required=True, help="path to the JSON configuration")
    run.add_argument("--workers", type=int, default=None, help="thread cap for supernode factorization")
    run.add_argument("--out", default=None, help="CSV output path (overrides output_path in the config)")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.workers is not None:
            if args.workers < 1:
                raise ConfigError("--workers must be at least 1")
            cfg.workers = args.workers
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = args.out or cfg.output_path or f"{cfg.experiment}.csv"
    try:
        fh = open(out, "w", encoding="utf-8", newline="")
    except OSError as exc:
        print(f"config error: cannot write {out}: {exc.strerror}", file=sys.stderr)
        return EXIT_CONFIG
    with fh:
        try:
            result = run_experiment(cfg, fh)
        except ConfigError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        except NumericalFailure as exc:
            print(f"numerical failure: {exc} (partial report in {out})", file=sys.stderr)
            return EXIT_NUMERICAL
    print(f"{cfg.experiment}: {_summary(result)} -> {out}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
