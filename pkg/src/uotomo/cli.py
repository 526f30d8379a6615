"""Command-line driver.

    uotomo phantom|forward|reconstruct|linearize-check [--config FILE] [--key value ...]
    uotomo preset NAME [--config FILE] [--key value ...]

Every ExperimentConfig key is also a flag (underscores become dashes).
Exit codes: 0 success, 2 configuration error, 3 solver failure, 4 I/O error.
On failure a JSON error record goes to stderr and to ``<output_dir>/error.json``.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

from .experiment import PRESETS, ConfigError, ExperimentConfig, config_from_mapping, \
    parse_config_text, run_experiment
from .fileio import FormatError
from .forward_sim import PositivityError
from .greens import GreensPositivityError
from .grid_fem import GridMismatchError
from .linearized import LinearizationError
from .sparse_solver import SolverError

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_IO = 0, 2, 3, 4
COMMANDS = ("phantom", "forward", "reconstruct", "linearize-check")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="uotomo", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS + ("preset",):
        p = sub.add_parser(name)
        if name == "preset":
            p.add_argument("name", help=f"one of {', '.join(sorted(PRESETS))}")
        p.add_argument("--config", help="key = value file")
        for f in fields(ExperimentConfig):
            # values stay strings here and are coerced (with field-named errors) later
            p.add_argument("--" + f.name.replace("_", "-"), dest=f.name, default=None,
                           metavar=f.type.upper(), help=f"default {f.default!r}")
    return parser


def _error_record(kind: str, exc: BaseException, status: int) -> dict:
    rec = {"status": status, "kind": kind, "error": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, ConfigError):
        rec["field"] = exc.key
    return rec


def _report(rec: dict, output_dir) -> None:
    print(json.dumps(rec), file=sys.stderr)
    if output_dir:
        try:
            Path(output_dir).mkdir(parents=True, exist_ok=True)
            (Path(output_dir) / "error.json").write_text(json.dumps(rec, indent=2) + "\n")
        except OSError:
            pass


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    """Defaults, then the preset, then the config file, then explicit flags."""
    values: dict = {}
    if args.command == "preset":
        if args.name not in PRESETS:
            raise ConfigError("preset", f"unknown preset {args.name!r}; one of {sorted(PRESETS)}")
        values.update(PRESETS[args.name])
    if args.config:
        values.update(parse_config_text(Path(args.config).read_text()))
    for f in fields(ExperimentConfig):
        v = getattr(args, f.name)
        if v is not None:
            values[f.name] = v
    return config_from_mapping(values).validate()


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    output_dir = args.output_dir or ExperimentConfig.output_dir
    try:
        cfg = resolve_config(args)
        output_dir = cfg.output_dir
        run = run_experiment(cfg, args.command)
    except ConfigError as exc:
        _report(_error_record("config", exc, EXIT_CONFIG), output_dir)
        return EXIT_CONFIG
    except (SolverError, PositivityError, GreensPositivityError, LinearizationError) as exc:
        _report(_error_record("solver", exc, EXIT_SOLVER), output_dir)
        return EXIT_SOLVER
    except (OSError, FormatError, GridMismatchError) as exc:
        _report(_error_record("io", exc, EXIT_IO), output_dir)
        return EXIT_IO
    except ValueError as exc:
        # remaining precondition failures inside the library are bad inputs
        _report(_error_record("config", exc, EXIT_CONFIG), output_dir)
        return EXIT_CONFIG
    print(json.dumps({"status": EXIT_OK, "output_dir": str(run.out),
                      "outputs": run.outputs, "timings": run.timings}))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
