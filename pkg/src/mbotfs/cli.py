"""Command-line entry points.

Subcommands: ``ber``, ``papr``, ``train``, ``sweep``, ``validate-config``.
Exit codes: 0 on success, 1 on a configuration problem, 2 on a runtime
failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import yaml

from .errors import ConfigurationError
from .harness import (
    PRESETS,
    config_from_dict,
    config_to_dict,
    get_preset,
    load_config,
    run_ber,
    run_papr,
    run_training,
)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2


def _add_common(sub):
    sub.add_argument("--config", help="YAML experiment config")
    sub.add_argument("--preset", choices=sorted(PRESETS), help="named preset")
    sub.add_argument("--seed", type=int, default=None, help="override the seed")
    sub.add_argument("--workers", type=int, default=None, help="worker count")
    sub.add_argument("--out", default="runs", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mbotfs",
        description="Link-level simulations for multi-band DFT-spread OTFS-IM "
                    "over LEO satellite channels.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    for name, text in (
        ("ber", "Monte-Carlo bit-error-rate sweep"),
        ("papr", "peak-power CCDF estimation"),
        ("train", "train the configured autoencoder"),
    ):
        p = sub.add_parser(name, help=text)
        _add_common(p)

    p = sub.add_parser("sweep", help="re-run a mode over a swept config field")
    _add_common(p)
    p.add_argument("--mode", choices=("ber", "papr", "train"), default="ber")
    p.add_argument("--param", required=True, help="dotted config path, e.g. ae.eta")
    p.add_argument("--values", required=True,
                   help="comma-separated values for the swept field")

    p = sub.add_parser("validate-config", help="check a config file and exit")
    p.add_argument("--config", required=True)
    return parser


def _load(args):
    if args.config:
        cfg = load_config(args.config)
    elif args.preset:
        cfg = get_preset(args.preset)
    else:
        raise ConfigurationError("pass --config or --preset")
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "workers", None) is not None:
        cfg = replace(cfg, workers=args.workers)
    cfg.validate()
    return cfg


def _set_dotted(data: dict, dotted: str, value):
    keys = dotted.split(".")
    node = data
    for k in keys[:-1]:
        if not isinstance(node.get(k), dict):
            raise ConfigurationError(f"no nested section {k!r} in config")
        node = node[k]
    if keys[-1] not in node:
        raise ConfigurationError(f"unknown config field {dotted!r}")
    node[keys[-1]] = value


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "validate-config":
            cfg = load_config(args.config)
            print(f"ok: {cfg.name}")
            return EXIT_OK
        cfg = _load(args)
    except (ConfigurationError, FileNotFoundError, yaml.YAMLError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        if args.command == "ber":
            path = run_ber(cfg, args.out)
            print(path)
        elif args.command == "papr":
            path = run_papr(cfg, args.out)
            print(path)
        elif args.command == "train":
            result = run_training(cfg, args.out)
            print(result["checkpoint"])
        elif args.command == "sweep":
            base = config_to_dict(cfg)
            runner = {"ber": run_ber, "papr": run_papr, "train": run_training}[args.mode]
            for raw in args.values.split(","):
                data = json.loads(json.dumps(base))
                _set_dotted(data, args.param, _parse_value(raw))
                point = config_from_dict(data)
                tag = args.param.replace(".", "_")
                point = replace(point, name=f"{point.name}_{tag}_{raw}")
                point.validate()
                out = runner(point, args.out)
                print(out if not isinstance(out, dict) else out["checkpoint"])
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
