"""Command-line entry point: ``ssbsim <subcommand> [--config PATH] [--seed N] [--out DIR] [--threads N]``."""
from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

from . import __version__
from .config import ConfigError, ExperimentConfig
from .core import BudgetExceededError
from .experiments import COMMANDS

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BUDGET = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ssbsim", description="Digitized adiabatic symmetry-breaking experiments.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML experiment configuration")
    common.add_argument("--seed", type=int, help="master RNG seed (overrides the config)")
    common.add_argument("--out", type=Path, help="output directory (overrides the config)")
    common.add_argument("--threads", type=int, default=1, help="worker threads for sweeps")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=f"run the {name} experiment")
    dump = sub.add_parser("dump-config", parents=[common], help="print the effective configuration")
    dump.set_defaults(dump=True)
    return parser


def load_config(args: argparse.Namespace) -> ExperimentConfig:
    if args.config is not None:
        try:
            text = args.config.read_text()
        except OSError as exc:
            raise ConfigError(f"--config: cannot read {args.config} ({exc.strerror})") from exc
        cfg = ExperimentConfig.from_yaml(text)
    else:
        cfg = ExperimentConfig().validate()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.output = str(args.out)
    if args.threads < 1:
        raise ConfigError("--threads: must be at least 1")
    return cfg.validate()


def write_outputs(outdir: Path, command: str, cfg: ExperimentConfig, files: dict[str, str], seconds: float) -> Path:
    """Write data files and a manifest; the wall-clock lives only in the manifest."""
    outdir.mkdir(parents=True, exist_ok=True)
    checksums = {}
    for name, text in files.items():
        data = text.encode()
        (outdir / name).write_bytes(data)
        checksums[name] = hashlib.sha256(data).hexdigest()
    manifest = {
        "command": command,
        "version": __version__,
        "config": cfg.to_dict(),
        "wall_clock_seconds": round(seconds, 3),
        "outputs": checksums,
    }
    path = outdir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1) + "\n")
    return path


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if getattr(args, "dump", False):
        sys.stdout.write(cfg.to_yaml())
        return EXIT_OK
    start = time.perf_counter()
    try:
        files = COMMANDS[args.command](cfg, threads=args.threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BudgetExceededError as exc:
        print(f"budget exceeded: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    manifest = write_outputs(Path(cfg.output), args.command, cfg, files, time.perf_counter() - start)
    print(f"wrote {len(files)} files and {manifest}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
