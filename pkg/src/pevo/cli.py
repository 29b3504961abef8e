"""Command line entry point ``pevo``."""
from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .pipeline import EXIT_CONFIG, SUBCOMMAND_STAGES, load_config, preset_config, run_pipeline
from .scenarios import PRESETS, ConfigError


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pevo", description="Spectral p-evolution solver pipelines.")
    ap.add_argument("--list-presets", action="store_true", help="list scenario presets and exit")
    sub = ap.add_subparsers(dest="command")
    for name in SUBCOMMAND_STAGES:
        sp = sub.add_parser(name, help=f"run the {name} stage(s)")
        src = sp.add_mutually_exclusive_group()
        src.add_argument("--config", action="append", metavar="PATH",
                         help="JSON run configuration (repeat for several runs)")
        src.add_argument("--preset", action="append", metavar="NAME", help="run a preset with defaults")
        sp.add_argument("--out", default="pevo-out", metavar="DIR", help="output directory")
        sp.add_argument("--jobs", type=int, default=1, metavar="K", help="parallel runs")
        sp.add_argument("--seed", type=int, default=None, metavar="S", help="override the config seed")
        sp.add_argument("--list-presets", action="store_true", help="list scenario presets and exit")
    return ap


def list_presets() -> str:
    lines = []
    for name, (_, defaults, desc) in PRESETS.items():
        lines.append(f"{name}: {desc}")
        lines.append(f"    defaults: {json.dumps(defaults, sort_keys=True)}")
    return "\n".join(lines)


def _one(job):
    cfg, out, command = job
    return run_pipeline(cfg, out, command).exit_code


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.list_presets:
        print(list_presets())
        return 0
    if args.command is None:
        _parser().print_help()
        return EXIT_CONFIG
    try:
        if args.config:
            cfgs = [load_config(p) for p in args.config]
        elif args.preset:
            cfgs = [preset_config(n) for n in args.preset]
        else:
            raise ConfigError("give --config PATH or --preset NAME")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.seed is not None:
        for c in cfgs:
            c["seed"] = args.seed
    base = Path(args.out)
    if len(cfgs) == 1:
        jobs = [(cfgs[0], base, args.command)]
    else:
        jobs = [(c, base / f"{k:02d}-{c['scenario']['name']}", args.command) for k, c in enumerate(cfgs)]
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as ex:
            codes = list(ex.map(_one, jobs))
    else:
        codes = [_one(j) for j in jobs]
    for (cfg, out, _), code in zip(jobs, codes):
        print(f"{cfg['scenario']['name']}: exit {code} ({out})")
    return max(codes)


if __name__ == "__main__":
    sys.exit(main())
