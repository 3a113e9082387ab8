"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 numerical failure in one or
more targets.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__, pipeline


def _load_config(path: str | None) -> pipeline.ExperimentConfig:
    if path is None:
        return pipeline.ExperimentConfig()
    return pipeline.validate_config(Path(path).read_text())


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qkr",
        description="Kicked-rotor spectral/eigenvector statistics pipeline",
    )
    parser.add_argument("--version", action="version", version=f"qkr {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    run_parser = sub.add_parser("run", help="compute targets and write CSV outputs")
    run_parser.add_argument("--config", help="flat key=value config file")
    run_parser.add_argument(
        "--targets",
        required=True,
        help="comma-separated list from: " + ",".join(pipeline.TARGETS),
    )
    run_parser.add_argument("--seed", type=int, help="override the config seed")
    run_parser.add_argument("--out", help="override the output directory")
    run_parser.add_argument(
        "--desk",
        action="store_true",
        help="desk-scale preset (N=501, ensemble 20, trimmed transition grids)",
    )
    run_parser.add_argument(
        "--no-cache", action="store_true", help="disable the on-disk artifact cache"
    )
    run_parser.add_argument(
        "--quiet", action="store_true", help="suppress progress lines"
    )

    validate_parser = sub.add_parser("validate", help="parse and check a config file")
    validate_parser.add_argument("--config", help="flat key=value config file")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        config = _load_config(args.config)
    except (pipeline.ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    if args.command == "validate":
        print(pipeline.serialize_config(config), end="")
        print(f"# config hash: {pipeline.config_hash(config)}")
        return 0

    if args.desk:
        config = pipeline.desk_preset(config)
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    if args.out is not None:
        config = replace(config, output_dir=args.out)
    if args.no_cache:
        config = replace(config, cache=False)
    try:
        pipeline._check_config(config)
    except pipeline.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    targets = [t.strip() for t in args.targets.split(",") if t.strip()]
    log = None if args.quiet else (lambda message: print(message, flush=True))
    try:
        manifest = pipeline.run(config, targets, log=log)
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    out = Path(config.output_dir) / "run_manifest.json"
    print(f"manifest: {out}")
    if manifest.failures:
        print(f"failed targets: {', '.join(manifest.failures)}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
