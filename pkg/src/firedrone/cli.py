"""``firedrone`` command line: datasets, training, planning, rollouts, benchmarks, images."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

log = logging.getLogger("firedrone")

EXIT_USAGE = 1
EXIT_FAULT = 2


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    """Argument parser that reports usage problems as exceptions instead of exiting with 2."""

    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    p.add_argument("-v", "--verbose", action="store_true")


def _models(path):
    from .predictor import IcnnModel

    d = Path(path)
    out = []
    for name in ("s.icnn", "sq.icnn"):
        p = d / name
        if not p.exists():
            raise FileNotFoundError(f"model file not found: {p}")
        out.append(IcnnModel.load(p))
    return out


def cmd_gen_data(args) -> int:
    from .firegrid import augment, generate_pairs, write_pairs

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for kind, with_quench in (("s", False), ("sq", True)):
        pairs = generate_pairs(args.envs, args.size, args.horizon, with_quench, args.seed)
        if args.augment:
            pairs = augment(pairs)
        write_pairs(pairs, out / f"{kind}_pairs.jsonl")
        print(f"{kind}: {len(pairs)} pairs -> {out / f'{kind}_pairs.jsonl'}")
    return 0


def cmd_train(args) -> int:
    from .firegrid import augment, read_pairs
    from .predictor import evaluate, train_s, train_sq

    data, out = Path(args.data), Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    hyper = {"epochs": args.epochs, "hidden": args.hidden}
    kinds = ("s", "sq") if args.kind == "both" else (args.kind.lower(),)
    for kind in kinds:
        src = data / f"{kind}_pairs.jsonl"
        if not src.exists():
            raise FileNotFoundError(f"training data not found: {src}")
        pairs = read_pairs(src)
        if args.augment:
            pairs = augment(pairs)
        model = (train_s if kind == "s" else train_sq)(pairs, hyper, seed=args.seed)
        model.save(out / f"{kind}.icnn")
        m = evaluate(model, pairs)
        print(f"{kind}: trained on {len(pairs)} pairs, training accuracy {m.accuracy:.4f} -> {out / f'{kind}.icnn'}")
    return 0


def cmd_eval_predictor(args) -> int:
    from .firegrid import read_pairs
    from .predictor import IcnnModel, evaluate

    for p in (Path(args.model), Path(args.data)):
        if not p.exists():
            raise FileNotFoundError(f"file not found: {p}")
    model = IcnnModel.load(args.model)
    report = evaluate(model, read_pairs(args.data))
    for name, value in report.as_dict().items():
        print(f"{name:<12} {value:.4f}")
    return 0


def _map_for(scenario, args):
    from .firegrid import load_map
    from .rollout import initial_conditions

    if getattr(args, "map", None):
        return load_map(args.map), None
    return initial_conditions(scenario)


def cmd_plan(args) -> int:
    from .model import load_scenario
    from .rollout import make_planner

    scenario = load_scenario(_existing(args.scenario))
    s_model, sq_model = _models(args.models)
    fire, _ = _map_for(scenario, args)
    planner = make_planner(args.planner, s_model, sq_model)
    out = planner(fire, scenario, None, args.terminal, args.seed)
    x = out.decision.x
    rec = {
        "planner": args.planner,
        "feasible": out.feasible,
        "value": round(float(out.value), 9),
        "b": out.decision.b.tolist(),
        "cells": out.instance.cells.tolist(),
        "assignments": [[int(i), int(j), int(l)] for i, j, l in np.argwhere(x > 0)],
    }
    text = json.dumps(rec, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def cmd_rollout(args) -> int:
    from .bench import render
    from .model import load_scenario
    from .rollout import run_episode

    scenario = load_scenario(_existing(args.scenario))
    s_model, sq_model = _models(args.models)
    fire, weather = _map_for(scenario, args)
    trace = run_episode(fire, scenario, args.planner, args.horizon, args.seed, weather,
                        s_model=s_model, sq_model=sq_model)
    if args.out:
        trace.write_jsonl(args.out)
    if args.render:
        render(trace, args.render, Path(args.out).stem if args.out else "episode")
    print(json.dumps(trace.summary(), sort_keys=True))
    return 0


def cmd_bench(args) -> int:
    from .bench import BenchConfig, run_bench

    config = BenchConfig.from_json(args.config)
    if args.seeds:
        config.seeds = args.seeds
    if args.output:
        config.output = args.output
    report = run_bench(config)
    for row in report.summary_rows():
        print(f"{row['scenario']:<12} {row['planner']:<10} moves {float(row['mean_moves']):9.2f}  "
              f"burn {float(row['mean_burn_cost']):7.1f}  uncontained {row['uncontained']}")
    red = report.reductions()
    if red:
        print(f"mean move reduction (mip_ccro vs mip_plain): {report.mean_reduction():.1f}%")
    print(f"report: {Path(config.output) / 'report.csv'}")
    return 0


def cmd_render(args) -> int:
    from .bench import render

    trace = _existing(args.trace)
    for p in render(trace, args.out, Path(trace).stem):
        print(p)
    return 0


def _existing(path) -> Path:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"file not found: {p}")
    return p


def build_parser() -> Parser:
    from .rollout import DEFAULT_HORIZON, PLANNERS

    parser = Parser(prog="firedrone", description=__doc__)
    sub = parser.add_subparsers(dest="command", parser_class=Parser)

    p = sub.add_parser("gen-data", help="simulate training pairs for both predictors")
    p.add_argument("--size", type=int, default=20)
    p.add_argument("--envs", type=int, default=60)
    p.add_argument("--horizon", type=int, default=9)
    p.add_argument("--augment", action="store_true", help="add the eight grid symmetries")
    p.add_argument("--out", default="data")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="fit spread (S) and/or quench-aware (SQ) predictors")
    p.add_argument("--data", default="data")
    p.add_argument("--kind", choices=["S", "SQ", "both"], default="both")
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--augment", action="store_true")
    p.add_argument("--out", default="models")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval-predictor", help="cell-level metrics of a model on a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_eval_predictor)

    p = sub.add_parser("plan", help="solve a single period")
    p.add_argument("--scenario", required=True)
    p.add_argument("--map", help="intensity grid file; defaults to the scenario's initial map")
    p.add_argument("--planner", choices=PLANNERS, default="mip_ccro")
    p.add_argument("--models", default="models")
    p.add_argument("--terminal", action="store_true", help="require full coverage")
    p.add_argument("--out")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("rollout", help="run one multi-period episode")
    p.add_argument("--scenario", required=True)
    p.add_argument("--map")
    p.add_argument("--planner", choices=PLANNERS, default="mip_ccro")
    p.add_argument("--models", default="models")
    p.add_argument("--horizon", type=int, default=DEFAULT_HORIZON)
    p.add_argument("--out", help="trace JSONL path")
    p.add_argument("--render", metavar="DIR", help="also write frames and sortie map")
    p.set_defaults(func=cmd_rollout)

    p = sub.add_parser("bench", help="compare planners on a set of scenarios")
    p.add_argument("--config", required=True)
    p.add_argument("--seeds", type=int, nargs="+", help="override the config's episode seeds")
    p.add_argument("--output", help="override the config's output directory")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("render", help="draw frames and sortie map from a trace file")
    p.add_argument("--trace", required=True)
    p.add_argument("--out", default="render")
    p.set_defaults(func=cmd_render)

    for action in sub.choices.values():
        _add_common(action)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    if args.command is None:
        print(parser.format_usage(), file=sys.stderr, end="")
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except Exception as exc:  # runtime faults map to one exit code
        log.debug("command failed", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAULT


if __name__ == "__main__":
    sys.exit(main())
