"""Command-line interface.

Exit codes: 0 success, 1 usage or I/O error, 2 infeasible repair,
3 solver limits exhausted without a feasible repair.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import experiments
from .bnb import BnbConfig
from .controlsim import DivergedRollout
from .data import load_dataset
from .encoder import EncodingError, RepairSpec, encode
from .miqp import export_lp
from .network import IntervalBox, load_network, random_network, save_network
from .predicate import load_predicate
from .repair import (InfeasibleRepairError, SolverLimitError, evaluate,
                     falsify, repair)
from .trainer import DivergenceError, TrainConfig, dataset_loss, train
from . import controlsim as cs

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INFEASIBLE = 2
EXIT_TIME_LIMIT = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _parse_box(text: str) -> IntervalBox:
    """'lo,hi;lo,hi;...' one pair per dimension."""
    lows, highs = [], []
    for part in text.split(";"):
        pieces = part.split(",")
        if len(pieces) != 2:
            raise UsageError(f"bad box component {part!r}; expected 'lo,hi'")
        lows.append(float(pieces[0]))
        highs.append(float(pieces[1]))
    return IntervalBox(np.array(lows), np.array(highs))


def _emit(args, payload: dict, human: str):
    if args.json:
        print(json.dumps(payload, default=float))
    else:
        print(human)


def build_parser() -> _Parser:
    p = _Parser(prog="relurepair",
                description="Layer-wise repair of feed-forward ReLU networks")
    p.add_argument("--json", action="store_true",
                   help="machine-readable JSON on stdout")
    p.add_argument("-v", "--verbose", action="store_true",
                   help="progress logging on stderr")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a network on a dataset CSV")
    t.add_argument("--data", required=True)
    t.add_argument("--arch", required=True, help="layer widths, e.g. 2,3,3,2")
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--epochs", type=int, default=1000)
    t.add_argument("--batch-size", type=int, default=32)
    t.add_argument("--lr", type=float, default=0.005)
    t.add_argument("--loss", choices=["sse", "softmax_ce"], default="sse")

    r = sub.add_parser("repair", help="repair one layer against a predicate")
    r.add_argument("--net", required=True)
    r.add_argument("--layer", type=int, required=True,
                   help="1-based; the last layer is L+1")
    r.add_argument("--predicate", required=True)
    r.add_argument("--samples", required=True)
    r.add_argument("--delta-max", type=float, default=10.0)
    r.add_argument("--delta-weight", type=float, default=1.0)
    r.add_argument("--bigm-cap", type=float, default=1e4)
    r.add_argument("--out", required=True)
    r.add_argument("--report")
    r.add_argument("--node-limit", type=int)
    r.add_argument("--time-limit", type=float)
    r.add_argument("--gap-rel", type=float, default=1e-4)
    r.add_argument("--workers", type=int, default=1)

    e = sub.add_parser("eval", help="evaluate a network on a dataset")
    e.add_argument("--net", required=True)
    e.add_argument("--baseline")
    e.add_argument("--data", required=True)
    e.add_argument("--predicate")

    f = sub.add_parser("falsify", help="sample for predicate violations")
    f.add_argument("--net", required=True)
    f.add_argument("--predicate", required=True)
    f.add_argument("--box", required=True, help="'lo,hi;lo,hi;...' per input dim")
    f.add_argument("--n", type=int, required=True)
    f.add_argument("--seed", type=int, default=0)

    s = sub.add_parser("simulate", help="closed-loop unicycle rollouts")
    s.add_argument("--policy", required=True,
                   help="network JSON path, or 'expert'")
    s.add_argument("--scenario", help="scenario JSON; defaults when omitted")
    s.add_argument("--n-rollouts", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", help="directory for trajectory CSVs")

    x = sub.add_parser("export", help="export a repair instance as an LP file")
    x.add_argument("--instance", required=True,
                   help="JSON: {net, layer, predicate, samples, delta_max, ...}")
    x.add_argument("--lp", required=True)

    g = sub.add_parser("experiment", help="run a packaged desk-scale experiment")
    g.add_argument("name", choices=sorted(experiments.RUNNERS))
    g.add_argument("--out", default="out")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--workers", type=int, default=1)
    return p


def _cmd_train(args) -> int:
    data = load_dataset(args.data)
    dims = [int(w) for w in args.arch.split(",")]
    net = random_network(dims, seed=args.seed)
    cfg = TrainConfig(epochs=args.epochs, batch_size=args.batch_size,
                      learning_rate=args.lr, seed=args.seed, loss=args.loss)
    trained = train(net, data, cfg)
    save_network(trained, args.out)
    loss = dataset_loss(trained, data, args.loss)
    _emit(args, {"out": args.out, "loss": loss}, f"trained {args.out}: loss {loss:.6g}")
    return EXIT_OK


def _cmd_repair(args) -> int:
    if args.layer < 1:
        raise UsageError("layers are 1-indexed; the first repairable layer is 1")
    net = load_network(args.net)
    pred = load_predicate(args.predicate)
    samples = load_dataset(args.samples)
    spec = RepairSpec(args.layer, samples, pred, delta_max=args.delta_max,
                      delta_weight=args.delta_weight, bigm_cap=args.bigm_cap)
    cfg = BnbConfig(node_limit=args.node_limit, time_limit_s=args.time_limit,
                    gap_rel=args.gap_rel, workers=args.workers,
                    log_interval=10 if args.verbose else 0)
    repaired, report = repair(net, spec, cfg)
    save_network(repaired, args.out)
    report.network_path = args.out
    if args.report:
        report.save(args.report)
        report.report_path = args.report
    _emit(args, report.to_dict(),
          f"repaired layer {args.layer}: delta={report.delta:.6g} "
          f"status={report.status} satisfaction="
          f"{report.evaluation.satisfaction_rate}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    net = load_network(args.net)
    data = load_dataset(args.data)
    pred = load_predicate(args.predicate) if args.predicate else None
    baseline = load_network(args.baseline) if args.baseline else None
    rep = evaluate(net, data, pred, baseline)
    _emit(args, rep.to_dict(),
          f"mse={rep.mse:.6g} inside={rep.mse_inside} outside={rep.mse_outside} "
          f"violations={rep.violation_count}")
    return EXIT_OK


def _cmd_falsify(args) -> int:
    net = load_network(args.net)
    pred = load_predicate(args.predicate)
    box = _parse_box(args.box)
    hits = falsify(net, pred, box, args.n, args.seed)
    payload = {
        "n_hits": len(hits),
        "hits": [
            {"x0": h.x0.tolist(), "y": h.y.tolist(), "residual": h.residual}
            for h in hits[:100]
        ],
    }
    _emit(args, payload, f"{len(hits)} violating inputs out of {args.n}")
    return EXIT_OK


def _cmd_simulate(args) -> int:
    if args.scenario:
        with open(args.scenario) as fh:
            scenario = cs.Scenario.from_dict(json.load(fh))
    else:
        scenario = cs.Scenario()
    policy = cs.expert if args.policy == "expert" else load_network(args.policy)
    rng = np.random.default_rng(args.seed)
    reached = 0
    min_h = float("inf")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
    for i in range(args.n_rollouts):
        traj = cs.rollout(policy, scenario, cs.sample_init(scenario, rng))
        reached += traj.reached_goal
        min_h = min(min_h, traj.min_h)
        if args.out:
            traj.save_csv(os.path.join(args.out, f"trajectory_{i}.csv"))
    payload = {"n_rollouts": args.n_rollouts, "reached_goal": reached,
               "goal_rate": reached / args.n_rollouts, "min_h": min_h}
    _emit(args, payload,
          f"reached goal {reached}/{args.n_rollouts}, min h {min_h:.6g}")
    return EXIT_OK


def _cmd_export(args) -> int:
    with open(args.instance) as fh:
        inst = json.load(fh)
    net = load_network(inst["net"])
    pred = load_predicate(inst["predicate"])
    samples = load_dataset(inst["samples"])
    spec = RepairSpec(
        int(inst["layer"]), samples, pred,
        delta_max=float(inst.get("delta_max", 10.0)),
        delta_weight=float(inst.get("delta_weight", 1.0)),
        bigm_cap=float(inst.get("bigm_cap", 1e4)),
    )
    prob, _ = encode(net, spec)
    export_lp(prob, args.lp)
    _emit(args, {"lp": args.lp, "variables": prob.n, "rows": prob.n_rows,
                 "binaries": len(prob.binary_indices)},
          f"wrote {args.lp}: {prob.n} variables, {prob.n_rows} rows, "
          f"{len(prob.binary_indices)} binaries")
    return EXIT_OK


def _cmd_experiment(args) -> int:
    runner = experiments.RUNNERS[args.name]
    out_dir = os.path.join(args.out, args.name)
    summary = runner(out_dir, seed=args.seed, workers=args.workers)
    _emit(args, summary, json.dumps(summary, indent=2, default=float))
    return EXIT_OK


_COMMANDS = {
    "train": _cmd_train,
    "repair": _cmd_repair,
    "eval": _cmd_eval,
    "falsify": _cmd_falsify,
    "simulate": _cmd_simulate,
    "export": _cmd_export,
    "experiment": _cmd_experiment,
}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(
            level=logging.INFO if args.verbose else logging.WARNING,
            format="%(message)s", stream=sys.stderr,
        )
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InfeasibleRepairError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except SolverLimitError as exc:
        print(f"limits exhausted: {exc}", file=sys.stderr)
        return EXIT_TIME_LIMIT
    except (OSError, ValueError, EncodingError, DivergenceError,
            DivergedRollout) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
