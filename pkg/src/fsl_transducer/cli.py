"""Command-line entry point: ``fsl-transducer <subcommand> [options]``.

Every subcommand except ``selftest`` loads and validates a config file (all
fields optional, see :mod:`fsl_transducer.config`), applies command-line
overrides, and hands the normalized config to :func:`experiments.run_scenario`.

Exit codes: 0 success, 1 usage error, 2 config error, 3 numerical failure (or
a failing self-test). Failures print one JSON record to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .config import SCENARIOS, ConfigError, validate_config
from .dynamics import IntegratorError, PositivityError

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fsl-transducer", description="Fock-state-lattice transducer simulations")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in SCENARIOS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="YAML config file (lab units)")
        sp.add_argument("--out", default=f"out/{name}", help="output directory")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--workers", type=int, help="worker processes for ensemble runs")
        sp.add_argument("--overwrite", action="store_true", help="replace existing outputs")
        sp.add_argument("-v", "--verbose", action="count", default=0)
        sp.add_argument("--model", choices=("fsl", "ssh"), help="override the chain model")
        sp.add_argument("--n", type=int, dest="n_m", help="override the photon/excitation number")
    st = sub.add_parser("selftest")
    st.add_argument("-v", "--verbose", action="count", default=0)
    return p


def _fail(code: int, kind: str, message: str, **extra) -> int:
    record = {"error": kind, "message": message, "exit_code": code}
    record.update(extra)
    print(json.dumps(record), file=sys.stderr)
    return code


def _selftest() -> int:
    from .experiments import run_selftest

    rows = run_selftest()
    width = max(len(r[0]) for r in rows)
    for name, ok, detail in rows:
        print(f"{'PASS' if ok else 'FAIL'}  {name:<{width}}  {detail}")
    failed = [r[0] for r in rows if not r[1]]
    if failed:
        return _fail(EXIT_NUMERICAL, "SelftestFailure", f"{len(failed)} check(s) failed", failed=failed)
    return EXIT_OK


def main(argv=None) -> int:
    try:
        args = _parser().parse_args(argv)
    except UsageError as exc:
        return _fail(EXIT_USAGE, "UsageError", str(exc))
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2))

    if args.command == "selftest":
        return _selftest()

    from .experiments import OutputExistsError, run_scenario

    try:
        cfg = validate_config(args.config)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, "ConfigError", str(exc), errors=exc.errors)
    except OSError as exc:
        return _fail(EXIT_CONFIG, "ConfigError", f"cannot read config: {exc}")

    overrides = {"scenario": args.command}
    for key in ("seed", "workers", "model", "n_m"):
        val = getattr(args, key)
        if val is not None:
            overrides[key] = val
    try:
        cfg = validate_config(_merge(cfg, overrides))
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, "ConfigError", str(exc), errors=exc.errors)

    try:
        manifest = run_scenario(cfg, args.out, overwrite=args.overwrite)
    except OutputExistsError as exc:
        return _fail(EXIT_USAGE, "OutputExists", str(exc))
    except (IntegratorError, PositivityError, FloatingPointError, ArithmeticError) as exc:
        return _fail(EXIT_NUMERICAL, type(exc).__name__, str(exc))
    except ValueError as exc:
        return _fail(EXIT_CONFIG, type(exc).__name__, str(exc))
    print(json.dumps({"out": str(args.out), "scenario": cfg.scenario, "summary": manifest["summary"]},
                     default=str))
    return EXIT_OK


def _merge(cfg, overrides: dict) -> dict:
    from .config import config_to_dict

    d = config_to_dict(cfg)
    if "n_m" in overrides and d["input_state"].get("kind") == "fock":
        d["input_state"].pop("n", None)
    d.update(overrides)
    return d


if __name__ == "__main__":
    sys.exit(main())
