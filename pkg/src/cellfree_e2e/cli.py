"""Command line: ``cellfree-e2e run | validate | group``."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from .harness import ALGORITHMS, ExperimentSpec, run_experiment
from .optimizer import BcdOptions
from .problem import problem_from_deployment
from .scenario import ConfigError, build_deployment, config_from_mapping, tomllib, validate_config


def _read(path: str) -> dict:
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def _options(raw: dict) -> BcdOptions:
    section = raw.get("optimizer", {})
    names = {f.name for f in dataclasses.fields(BcdOptions)}
    unknown = sorted(set(section) - names)
    if unknown:
        raise ConfigError(f"unknown optimizer keys: {', '.join(unknown)}")
    return BcdOptions(**section)


def _algos(text: str) -> tuple[str, ...]:
    algos = tuple(a.strip() for a in text.split(",") if a.strip())
    bad = [a for a in algos if a not in ALGORITHMS]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown algorithm(s) {bad}; choose from {','.join(ALGORITHMS)}")
    return algos


def cmd_run(args) -> int:
    raw = _read(args.config)
    try:
        config = config_from_mapping(raw)
        options = _options(raw)
    except (ConfigError, TypeError) as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return 2
    problems = validate_config(config)
    if problems:
        print("invalid config: " + "; ".join(problems), file=sys.stderr)
        return 2
    exp = raw.get("experiment", {})
    algos = args.algos or _algos(",".join(exp.get("algorithms", ALGORITHMS)))
    spec = ExperimentSpec(
        config=config,
        trials=args.trials if args.trials is not None else int(exp.get("trials", 200)),
        base_seed=args.seed if args.seed is not None else int(exp.get("seed", 0)),
        algorithms=algos,
        out_dir=Path(args.out),
        options=options,
        workers=args.workers,
    )
    records, summary = run_experiment(spec)
    for row in summary:
        saves = "  ".join(
            f"vs {b}: {row[f'savings_vs_{b}_pct']:.1f}%" for b in spec.algorithms if b != row["algorithm"]
        )
        print(
            f"{row['algorithm']:12s} mean {row['mean_total_power_w']:9.1f} W "
            f"({row['included']}/{row['trials']} trials)  {saves}"
        )
    failed = [
        (rec.trial, name) for rec in records for name, res in rec.results.items()
        if res.status not in ("optimal", "infeasible")
    ]
    if failed:
        print(f"{len(failed)} runs ended without a usable status: {failed}", file=sys.stderr)
        return 1
    return 0


def cmd_validate(args) -> int:
    try:
        config = config_from_mapping(_read(args.config))
    except (ConfigError, TypeError) as exc:
        print(f"invalid: {exc}")
        return 1
    problems = validate_config(config)
    if problems:
        print("invalid: violated " + "; ".join(problems))
        return 1
    print("ok")
    return 0


def cmd_group(args) -> int:
    config = config_from_mapping(_read(args.config))
    inputs = problem_from_deployment(config, build_deployment(config, args.seed))
    grouping = inputs.grouping
    print(f"objective (max summed chordal distance) = {grouping.objective:.6g}")
    for i, group in enumerate(grouping.groups):
        gains = ", ".join(f"{inputs.Lambda[l]:.4g}" for l in group)
        print(f"group {i}: APs {list(group)}  Lambda [{gains}]")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cellfree-e2e", description=__doc__)
    parser.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the Monte-Carlo comparison")
    run.add_argument("--config", required=True)
    run.add_argument("--trials", type=int, default=None, help="number of trials (default 200)")
    run.add_argument("--seed", type=int, default=None, help="base seed; trial i uses seed + i")
    run.add_argument("--algos", type=_algos, default=None, help="comma list of " + ",".join(ALGORITHMS))
    run.add_argument("--out", default="results")
    run.add_argument("--workers", type=int, default=1)
    run.set_defaults(func=cmd_run)

    val = sub.add_parser("validate", help="check a config file")
    val.add_argument("--config", required=True)
    val.set_defaults(func=cmd_validate)

    grp = sub.add_parser("group", help="print the fronthaul AP grouping of one deployment")
    grp.add_argument("--config", required=True)
    grp.add_argument("--seed", type=int, default=0)
    grp.set_defaults(func=cmd_group)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    np.set_printoptions(linewidth=120)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
