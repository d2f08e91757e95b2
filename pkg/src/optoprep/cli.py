"""Command-line entry point: ``optoprep run|sweep|validate-config|list-presets``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

from .errors import ConfigError, NumericalError, OptoprepError
from .experiments import (ExperimentConfig, TruncationOptions, list_presets, preset_config, run, sweep)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3


def _load(args) -> ExperimentConfig:
    if args.config:
        try:
            with open(args.config) as fh:
                cfg = ExperimentConfig.from_json(fh.read())
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config!r}: {exc}") from exc
    elif getattr(args, "preset", None):
        cfg = preset_config(args.preset)
    else:
        raise ConfigError("give --config PATH or --preset NAME")
    if getattr(args, "truncation_override", None):
        cfg = replace(cfg, truncation=_override(cfg.truncation, args.truncation_override))
    return cfg


def _override(trunc: TruncationOptions, text: str) -> TruncationOptions:
    """``MIRROR`` or ``MIRROR,CAVITY``; the convergence scan is dropped."""
    try:
        parts = [int(x) for x in text.split(",")]
    except ValueError as exc:
        raise ConfigError(f"--truncation-override expects MIRROR[,CAVITY], got {text!r}") from exc
    if not 1 <= len(parts) <= 2:
        raise ConfigError(f"--truncation-override expects MIRROR[,CAVITY], got {text!r}")
    cavity = parts[1] if len(parts) == 2 else trunc.cavity_dim
    return TruncationOptions(parts[0], cavity, ())


def _parse_values(text: str) -> list:
    values = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        try:
            values.append(int(item) if item.lstrip("-").isdigit() else float(item))
        except ValueError as exc:
            raise ConfigError(f"sweep value {item!r} is not a number") from exc
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="optoprep", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="verb", required=True)

    def common(p):
        p.add_argument("--config", help="JSON experiment config")
        p.add_argument("--preset", choices=list_presets(), help="start from a preset instead of a file")
        p.add_argument("--out", help="output directory (default: the config's output_dir)")
        p.add_argument("--threads", type=int, default=1, help="parallel sweep workers")
        p.add_argument("--seed", type=int, default=None, help="reserved; every pipeline is deterministic")
        p.add_argument("--truncation-override", help="MIRROR[,CAVITY] Fock cutoffs")

    common(sub.add_parser("run", help="run one preset pipeline"))
    sw = sub.add_parser("sweep", help="independent runs over one scalar config field")
    common(sw)
    sw.add_argument("--axis", required=True, help="dotted field, for example noise.kappa")
    sw.add_argument("--values", required=True, help="comma-separated values")
    v = sub.add_parser("validate-config", help="parse a config and print its normalized form")
    v.add_argument("--config", required=True)
    sub.add_parser("list-presets", help="print the available presets")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.verb == "list-presets":
            for name in list_presets():
                print(name)
            return EXIT_OK
        if args.verb == "validate-config":
            print(_load(args).to_json())
            return EXIT_OK
        cfg = _load(args)
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        if args.verb == "run":
            man = run(cfg, args.out)
        else:
            man = sweep(cfg, args.axis, _parse_values(args.values), args.out, args.threads)
        out = args.out or cfg.output_dir
        print(json.dumps({"output_dir": os.path.abspath(out), "summary": man.summary,
                          "failures": man.failures}, indent=2, sort_keys=True, default=float))
        return EXIT_NUMERICAL if man.failures else EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OptoprepError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
