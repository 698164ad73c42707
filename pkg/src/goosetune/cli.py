"""Command-line experiment runner.

    goosetune run --scenario payload-alternation --seed 1 --out runs/pa1
    goosetune run --config my_experiment.yaml --seed 3 --out runs/custom
    goosetune report --artifact runs/pa1 --kind fig5a
    goosetune validate --config my_experiment.yaml
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .config import SCENARIOS, load_config, scenario_config, validate_config
from .experiments import run_experiment
from .reports import REPORT_KINDS, emit_report


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="goosetune", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute one experiment scenario")
    src = run.add_mutually_exclusive_group(required=True)
    src.add_argument("--config", type=Path, help="experiment config YAML")
    src.add_argument("--scenario", choices=SCENARIOS, help="built-in scenario")
    run.add_argument("--seed", type=int, default=None, help="RNG seed override")
    run.add_argument("--out", type=Path, required=True, help="artifact output directory")
    run.add_argument(
        "--desk-scale", action="store_true", help="reduced iteration count for quick runs"
    )

    rep = sub.add_parser("report", help="emit plot-data files from an artifact")
    rep.add_argument("--artifact", type=Path, required=True)
    rep.add_argument("--kind", choices=REPORT_KINDS, required=True)
    rep.add_argument("--out", type=Path, default=None)

    val = sub.add_parser("validate", help="check a config file")
    val.add_argument("--config", type=Path, required=True)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO)

    if args.command == "run":
        if args.config:
            cfg = load_config(args.config)
            if args.desk_scale:
                cfg = replace(cfg, schedule=replace(cfg.schedule, iterations=min(cfg.schedule.iterations, 60)))
        else:
            cfg = scenario_config(args.scenario, seed=args.seed if args.seed is not None else 1, desk_scale=args.desk_scale)
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed)
        problems = validate_config(cfg)
        if problems:
            for issue in problems:
                print(f"config error: {issue}", file=sys.stderr)
            return 2
        artifact = run_experiment(cfg, out_dir=args.out)
        s = artifact.summary
        print(
            f"{s['scenario']} seed={s['seed']} [{s['scheme']}/{s['variant']}]: "
            f"{s['iterations_executed']} iterations, {s['violations']} violations, "
            f"{s['seed_fallbacks']} seed fallbacks -> {args.out}"
        )
        return 0

    if args.command == "report":
        out = emit_report(args.artifact, args.kind, args.out)
        print(f"wrote {out}")
        return 0

    if args.command == "validate":
        cfg = load_config(args.config)
        problems = validate_config(cfg)
        if problems:
            for issue in problems:
                print(f"config error: {issue}")
            return 2
        print("config ok")
        return 0
    return 1


if __name__ == "__main__":
    sys.exit(main())
