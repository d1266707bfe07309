"""Command line entry point: ``semibandit-bic {constants|run|verify|sweep}``."""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

from .config import parse_config
from .errors import BudgetExceeded, ConfigError, RejectionBudgetExceeded
from .harness import (
    COMMANDS,
    EXIT_BUDGET,
    EXIT_CONFIG,
    cmd_sweep,
    write_outputs,
)

SEED_ENV = "SEMIBANDIT_SEED"


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="semibandit-bic", description=__doc__)
    p.add_argument("command", choices=["constants", "run", "verify", "sweep"])
    p.add_argument("--config", required=True, help="JSON experiment config")
    p.add_argument("--seed", type=int, default=None, help="overrides the config and $%s" % SEED_ENV)
    p.add_argument("--threads", type=int, default=1,
                   help="worker threads for replicates; results do not depend on it")
    p.add_argument("--out", default=None, help="output directory (default: config 'out' or ./out)")
    return p


def _load_raw(path: str) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: line {e.lineno} column {e.colno}: {e.msg}") from e
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return raw


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    started = time.time()
    try:
        raw = _load_raw(args.config)
        if os.environ.get(SEED_ENV):
            try:
                raw["seed"] = int(os.environ[SEED_ENV])
            except ValueError as e:
                raise ConfigError(f"${SEED_ENV} is not an integer") from e
        if args.seed is not None:
            raw["seed"] = args.seed
        cfg = parse_config(raw)
        out = Path(args.out or cfg.out or "out")
        if args.command == "sweep":
            result = cmd_sweep(cfg, raw, args.threads)
        else:
            result = COMMANDS[args.command](cfg, args.threads)
        streams = f"0..{cfg.replicates - 1}" if args.command == "run" else None
        write_outputs(cfg, result, out, args.command, started, streams)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (BudgetExceeded, RejectionBudgetExceeded) as e:
        print(f"budget exceeded: {e}", file=sys.stderr)
        return EXIT_BUDGET
    if result.summary:
        print(json.dumps(result.summary, sort_keys=True, default=str)[:2000])
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
