"""Command line entry point: ``dlma run|suite|oracle|presets``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import yaml

from .harness import (ConfigError, SimulationError, describe_benchmark, load_configs,
                      preset_names, run_experiment, run_suite, _safe_name)
from .oracle import OracleCapabilityError


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--slots", type=int, help="override total_slots")
    p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                   help="dotted config override, e.g. channel.e_down=0.4 (repeatable)")
    p.add_argument("-v", "--verbose", action="store_true", help="progress logging")


def _overrides(args) -> list[str]:
    out = list(args.override)
    if args.seed is not None:
        out.append(f"seed={args.seed}")
    if args.slots is not None:
        out.append(f"total_slots={args.slots}")
    return out


def _sources(paths) -> list:
    out = []
    for p in paths:
        path = Path(p)
        out.extend(sorted(path.glob("*.yaml")) if path.is_dir() else [p])
    return out


def cmd_run(args) -> int:
    cfgs = load_configs(args.config, _overrides(args))
    for cfg in cfgs:
        out = Path(args.out or cfg.output or "runs")
        if len(cfgs) > 1:
            out = out / _safe_name(cfg.name)
        _, summary = run_experiment(cfg, out)
        print(json.dumps({k: summary[k] for k in (
            "name", "throughputs", "sum_throughput", "sum_log_throughput",
            "inter_agent_collisions_tail")}, sort_keys=True))
    return 0


def cmd_suite(args) -> int:
    summaries = run_suite(_sources(args.paths), args.out, args.jobs, args.seeds, _overrides(args))
    failed = [s for s in summaries if "error" in s]
    for s in failed:
        print(f"FAILED {s['name']}: {s['error']}", file=sys.stderr)
    print(f"{len(summaries) - len(failed)} runs ok, {len(failed)} failed; index at {Path(args.out) / 'index.json'}")
    return 1 if failed else 0


def cmd_oracle(args) -> int:
    docs = [describe_benchmark(cfg) for cfg in load_configs(args.config, _overrides(args))]
    yaml.safe_dump_all(docs, sys.stdout, sort_keys=False)
    return 0


def cmd_presets(args) -> int:
    for name in preset_names():
        print(name)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dlma", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one config file or preset (all sweep points)")
    p.add_argument("config", help="YAML file or preset name")
    p.add_argument("--out", help="output directory")
    _common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("suite", help="run many configs, optionally over several seeds")
    p.add_argument("paths", nargs="*", help="YAML files, preset names or directories")
    p.add_argument("--out", default="runs/suite")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    p.add_argument("--seeds", type=int, help="repeat each config with seeds 0..N-1")
    _common(p)
    p.set_defaults(func=cmd_suite)

    p = sub.add_parser("oracle", help="print the model-aware benchmark policy and throughputs")
    p.add_argument("config", help="YAML file or preset name")
    _common(p)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("presets", help="list shipped presets")
    p.set_defaults(func=cmd_presets)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, OracleCapabilityError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SimulationError as exc:
        print(f"simulation failed: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
