"""Trial loop: graph -> data -> models -> training -> metrics."""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass

import numpy as np

from ..model import build_model, save_checkpoint
from ..optim import Split, evaluate, train
from .data import gen_er_graph, gen_geometric_graph, gen_source_localization
from .fileio import load_edge_list, load_signals, write_records

log = logging.getLogger(__name__)


@dataclass(eq=False)
class _LoadedData:
    train: Split
    val: Split
    test: Split
    n_classes: int


def trial_seeds(seed, trial):
    """Independent integer seeds for the graph, data, model init and training of a trial."""
    ss = np.random.SeedSequence([seed, trial])
    graph, data, init, fit = (int(s.generate_state(1)[0]) for s in ss.spawn(4))
    return {"graph": graph, "data": data, "init": init, "train": fit}


def make_graph(cfg, seed):
    if cfg.graph_family == "er":
        return gen_er_graph(cfg.n, cfg.p, seed)
    if cfg.graph_family == "geometric":
        return gen_geometric_graph(cfg.n, cfg.radius, seed)
    return load_edge_list(cfg.graph_file)


def make_data(cfg, graph, seed):
    if cfg.signals_file:
        samples = load_signals(cfg.signals_file)
        x = np.stack([s for s, _ in samples])
        y = np.array([label for _, label in samples])
        if x.shape[1] != graph.n:
            raise ValueError(f"signals have {x.shape[1]} nodes, graph has {graph.n}")
        a, b = cfg.n_train, cfg.n_train + cfg.n_val
        if b + cfg.n_test > len(y):
            raise ValueError(f"{len(y)} samples cannot fill the configured splits")
        n_classes = int(y.max()) + 1
        return _LoadedData(
            Split(x[:a], y[:a]), Split(x[a:b], y[a:b]),
            Split(x[b:b + cfg.n_test], y[b:b + cfg.n_test]), n_classes,
        )
    return gen_source_localization(
        graph, cfg.num_classes, (cfg.n_train, cfg.n_val, cfg.n_test), cfg.t_max, seed
    )


def run_trial(cfg, trial, out_dir=None, on_record=None):
    """Train every configured architecture on one fresh graph and dataset.

    Returns ``(epoch_records, summary_records)``.
    """
    seeds = trial_seeds(cfg.seed, trial)
    graph = make_graph(cfg, seeds["graph"])
    data = make_data(cfg, graph, seeds["data"])
    n_classes = data.n_classes
    epoch_records, summaries = [], []
    for label, activation, hops in cfg.architectures():
        model = build_model(
            graph, activation, hops=hops, features=cfg.features, taps=cfg.taps,
            n_classes=n_classes, seed=seeds["init"],
        )
        init = evaluate(model, data.val) if len(data.val) else None
        rec0 = {"trial": trial, "model": label, "epoch": 0}
        if init is not None:
            rec0.update(val_loss=init["loss"], val_acc=init["accuracy"])
        records = [rec0]

        def emit(rec, label=label):
            full = {"trial": trial, "model": label, **rec}
            records.append(full)
            if on_record is not None:
                on_record(full)

        if cfg.epochs > 0:
            train(model, data, cfg.train_config(seeds["train"]), on_epoch=emit)
        test = evaluate(model, data.test) if len(data.test) else {"accuracy": math.nan}
        summary = {
            "trial": trial,
            "model": label,
            "test_acc": test["accuracy"],
            "param_count": model.conv_param_count(),
        }
        log.info("trial %d %s: test accuracy %.4f", trial, label, test["accuracy"])
        epoch_records.extend(records)
        summaries.append(summary)
        if out_dir is not None:
            save_checkpoint(model, os.path.join(out_dir, f"checkpoint_trial{trial}_{label}.txt"))
    return epoch_records, summaries


def aggregate(summaries):
    """Mean and standard error of test accuracy per architecture."""
    by_model = {}
    for s in summaries:
        by_model.setdefault(s["model"], []).append(s["test_acc"])
    out = []
    for model, accs in by_model.items():
        a = np.asarray(accs, dtype=float)
        stderr = float(a.std(ddof=1) / np.sqrt(a.size)) if a.size > 1 else 0.0
        out.append({"model": model, "trials": int(a.size), "mean_test_acc": float(a.mean()),
                    "stderr_test_acc": stderr})
    return out


def run_experiment(cfg, out_dir=None, trials=None):
    """Run ``cfg.trials`` trials (or the given trial indices) and collect metrics.

    With ``out_dir`` the metrics land in ``metrics.jsonl`` (epoch records,
    then per-trial summaries, then aggregates) next to one checkpoint per
    trained model.
    """
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
    trial_ids = range(cfg.trials) if trials is None else trials
    epochs, summaries = [], []
    for t in trial_ids:
        e, s = run_trial(cfg, t, out_dir)
        epochs.extend(e)
        summaries.extend(s)
    agg = aggregate(summaries)
    if out_dir is not None:
        write_records(epochs + summaries + agg, os.path.join(out_dir, "metrics.jsonl"))
    return {"epochs": epochs, "summaries": summaries, "aggregate": agg}
