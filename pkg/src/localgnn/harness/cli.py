"""Command line entry point: ``localgnn {gen,train,eval,gradcheck,invariance,bench}``."""

from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from ..model import build_model, load_checkpoint
from ..optim import Split, evaluate
from .bench import complexity_benchmark
from .checks import gradcheck_suite, invariance_suite
from .config import ExperimentConfig, dump_config, load_config
from .data import gen_source_localization
from .experiment import make_graph, run_experiment, trial_seeds
from .fileio import format_record, load_edge_list, load_signals, write_edge_list, write_records, write_signals

log = logging.getLogger("localgnn")


def _config(args):
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.activation:
        changes["activations"] = (args.activation,)
    if args.hops is not None:
        changes["hops"] = (args.hops,)
    return cfg.replace(**changes) if changes else cfg


def _out(args, default):
    out = args.out or default
    os.makedirs(out, exist_ok=True)
    return out


def _emit(records, out, name):
    for rec in records:
        print(format_record(rec))
    if out:
        write_records(records, os.path.join(out, name))


def cmd_gen(args):
    cfg = _config(args)
    out = _out(args, "data")
    seeds = trial_seeds(cfg.seed, args.trial)
    graph = make_graph(cfg, seeds["graph"])
    data = gen_source_localization(
        graph, cfg.num_classes, (cfg.n_train, cfg.n_val, cfg.n_test), cfg.t_max, seeds["data"]
    )
    write_edge_list(graph, os.path.join(out, "graph.txt"))
    for name in ("train", "val", "test"):
        split = getattr(data, name)
        write_signals(zip(split.x, split.y), os.path.join(out, f"{name}.csv"))
    with open(os.path.join(out, "config.txt"), "w", encoding="utf-8") as fh:
        fh.write(dump_config(cfg))
    print(f"wrote graph ({graph.n} nodes, {graph.num_edges // 2} edges) and splits to {out}")


def cmd_train(args):
    cfg = _config(args)
    out = _out(args, "runs")
    result = run_experiment(cfg, out)
    for rec in result["aggregate"]:
        print(format_record(rec))
    print(f"metrics: {os.path.join(out, 'metrics.jsonl')}")


def cmd_eval(args):
    cfg = _config(args)
    graph = load_edge_list(args.graph)
    samples = load_signals(args.signals)
    split = Split(np.stack([s for s, _ in samples]), np.array([y for _, y in samples]))
    activation = cfg.activations[0]
    model = build_model(graph, activation, hops=cfg.hops[0], features=cfg.features,
                        taps=cfg.taps, n_classes=cfg.num_classes)
    load_checkpoint(model, args.checkpoint)
    res = evaluate(model, split)
    print(format_record({"activation": activation, "samples": len(split),
                         "loss": res["loss"], "accuracy": res["accuracy"]}))


def cmd_gradcheck(args):
    kinds = [args.activation] if args.activation else ["relu", "median", "max"]
    seed = 0 if args.seed is None else args.seed
    records = [gradcheck_suite(k, args.instances, seed, args.step) for k in kinds]
    _emit(records, args.out, "gradcheck.jsonl")
    return 0 if all(r["max_rel_error"] <= 1e-5 for r in records) else 1


def cmd_invariance(args):
    kinds = [args.activation] if args.activation else ["relu", "median", "max"]
    seed = 0 if args.seed is None else args.seed
    records = [invariance_suite(k, args.trials, seed) for k in kinds]
    _emit(records, args.out, "invariance.jsonl")
    ok = all(r["max_node_dev"] <= 1e-9 and r["selection_mismatches"] == 0 for r in records)
    return 0 if ok else 1


def cmd_bench(args):
    kinds = [args.activation] if args.activation else ["median", "max"]
    hops = 2 if args.hops is None else args.hops
    seed = 0 if args.seed is None else args.seed
    records = complexity_benchmark(kinds, n=args.nodes, degree=args.degree, hops=hops,
                                   features=args.features, batch=args.batch,
                                   repeats=args.repeats, seed=seed)
    _emit(records, args.out, "bench.jsonl")
    return 0 if all(r["ratio"] <= 3.0 for r in records) else 1


def build_parser():
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", help="experiment config file (key = value lines)")
    shared.add_argument("--seed", type=int, default=None)
    shared.add_argument("--activation", choices=["relu", "median", "max"])
    shared.add_argument("--hops", type=int, default=None)
    shared.add_argument("--out", help="output directory")
    shared.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="localgnn", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", parents=[shared], help="write a graph and source-localization splits")
    p.add_argument("--trial", type=int, default=0)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", parents=[shared], help="run the configured experiment")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[shared], help="evaluate a checkpoint on a signal file")
    p.add_argument("--graph", required=True)
    p.add_argument("--signals", required=True)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", parents=[shared], help="finite-difference gradient check")
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--step", type=float, default=1e-6)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("invariance", parents=[shared], help="permutation invariance check")
    p.add_argument("--trials", type=int, default=100)
    p.set_defaults(func=cmd_invariance)

    p = sub.add_parser("bench", parents=[shared], help="activation forward time at n and 2n")
    p.add_argument("--nodes", type=int, default=1000)
    p.add_argument("--degree", type=int, default=6)
    p.add_argument("--features", type=int, default=8)
    p.add_argument("--batch", type=int, default=4)
    p.add_argument("--repeats", type=int, default=5)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    return args.func(args) or 0


if __name__ == "__main__":
    sys.exit(main())
