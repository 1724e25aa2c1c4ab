"""Command line entry point: train, eval, compare, oracle."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from .config import ExperimentConfig, SchedulerSpec, load_config
from .core import InvariantViolation
from .dqn import train
from .harness import run_experiment
from .oracle import InstanceTooLarge, instance_fixture, random_instance

log = logging.getLogger("fdrasim")

EXIT_ERROR = 1
EXIT_INVARIANT = 2


def _out_dir(args) -> Path:
    out = args.out or os.environ.get("FDRASIM_OUT")
    if not out:
        raise ValueError("no output directory: pass --out or set FDRASIM_OUT")
    return Path(out)


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    kw = {}
    if getattr(args, "slots", None):
        kw["slots"] = args.slots
    if getattr(args, "seeds", None):
        kw["seeds"] = tuple(args.seeds)
    return replace(cfg, **kw) if kw else cfg


def cmd_train(args) -> int:
    cfg = _config(args)
    tc = cfg.train
    if args.episodes is not None:
        tc = replace(tc, episodes=args.episodes)
    if args.seed is not None:
        tc = replace(tc, seed=args.seed)
    cfg = replace(cfg, train=tc)
    out = _out_dir(args)
    train(cfg.training_cell(), tc, out, cfg.half_width, cfg.payload_scale)
    print(out / "model.qnet")
    return 0


def cmd_eval(args) -> int:
    cfg = _config(args)
    entry = SchedulerSpec(args.scheduler, str(Path(args.model).resolve()) if args.model else None)
    cfg = replace(cfg, schedulers=(entry,))
    report = run_experiment(cfg)
    if args.out or os.environ.get("FDRASIM_OUT"):
        report.write(_out_dir(args))
    sys.stdout.write(report.to_csv())
    return 0


def cmd_compare(args) -> int:
    cfg = _config(args)
    if args.model:
        model = str(Path(args.model).resolve())
        specs = tuple(SchedulerSpec("star", model) if s.kind == "star" else s for s in cfg.schedulers)
        if not any(s.kind == "star" for s in specs):
            specs += (SchedulerSpec("star", model),)
        cfg = replace(cfg, schedulers=specs)
    out = _out_dir(args)
    paths = run_experiment(cfg).write(out)
    for p in paths.values():
        print(p)
    return 0


def cmd_oracle(args) -> int:
    state = random_instance(args.k, args.b, args.seed)
    fx = instance_fixture(state, args.seed, args.max_ues, args.max_rbs)
    text = json.dumps(fx, indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fdrasim", description="Contiguous RB allocation simulator")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a STAR Q-network")
    t.add_argument("--config")
    t.add_argument("--out")
    t.add_argument("--episodes", type=int)
    t.add_argument("--seed", type=int)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate one scheduler")
    e.add_argument("--config")
    e.add_argument("--scheduler", required=True, choices=["jade", "star", "random", "oracle"])
    e.add_argument("--model")
    e.add_argument("--out")
    e.add_argument("--slots", type=int)
    e.add_argument("--seeds", type=int, nargs="+")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("compare", help="run every configured scheduler and write reports")
    c.add_argument("--config")
    c.add_argument("--model", help="STAR model (added to the scheduler list if absent)")
    c.add_argument("--out")
    c.add_argument("--slots", type=int)
    c.add_argument("--seeds", type=int, nargs="+")
    c.set_defaults(func=cmd_compare)

    o = sub.add_parser("oracle", help="exhaustive optimum of a random small instance")
    o.add_argument("--k", type=int, default=2)
    o.add_argument("--b", type=int, default=4)
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--max-ues", type=int, default=3, help="refuse instances with more UEs")
    o.add_argument("--max-rbs", type=int, default=8, help="refuse instances with more RBs")
    o.add_argument("--out")
    o.set_defaults(func=cmd_oracle)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (FileNotFoundError, InstanceTooLarge, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
