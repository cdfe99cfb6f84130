"""Randomized permutation-invariance and gradient checks."""

from __future__ import annotations

import numpy as np

from ..backprop import TieError, finite_difference_check
from ..filters import ActivationWeights, ConvTaps, local_activation_forward
from ..graph_core import (
    Graph,
    Permutation,
    ShiftVariant,
    build_shift_operator,
    neighborhoods,
    permute_signal,
)
from ..model import GnnLayer, GnnModel, Readout, model_forward, permute_model, permute_table


def random_connected_graph(n, p, rng, weighted=True):
    """ER draw plus a random spanning path so every node has a neighbor."""
    upper = np.triu(rng.random((n, n)) < p, 1)
    order = rng.permutation(n)
    upper[np.minimum(order[:-1], order[1:]), np.maximum(order[:-1], order[1:])] = True
    i, j = np.nonzero(upper)
    w = rng.uniform(0.5, 1.5, size=i.size) if weighted else np.ones(i.size)
    return Graph.undirected(n, zip(i.tolist(), j.tolist(), w.tolist()))


def random_model(graph, activation, rng, n_layers, width, hops, readout="node",
                 n_classes=3, k_taps=3, f_in=1, shared=True):
    conv = build_shift_operator(graph, ShiftVariant.RESCALED_WEIGHTED_ADJACENCY)
    table = None
    if activation != "relu":
        table = neighborhoods(build_shift_operator(graph, ShiftVariant.SELF_LOOP_ADJACENCY), hops)
    layers = []
    for _ in range(n_layers):
        taps = ConvTaps(rng.uniform(-1, 1, size=(width, f_in, k_taps)))
        act = None
        if activation != "relu":
            shape = (hops + 1,) if shared else (width, hops + 1)
            act = ActivationWeights(rng.uniform(-1, 1, size=shape), shared)
        layers.append(GnnLayer(taps, activation, conv, act, table))
        f_in = width
    rows = f_in * graph.n if readout == "graph" else f_in
    bound = rows ** -0.5
    head = Readout(readout, rng.uniform(-bound, bound, size=(rows, n_classes)),
                   rng.uniform(-bound, bound, size=n_classes))
    return GnnModel(layers, head)


def invariance_trial(activation, rng, max_nodes=30, max_layers=2, max_width=4, max_hops=2):
    """One random (graph, model, signal, permutation) instance.

    Returns a dict with the end-to-end deviation of per-node outputs, the
    deviation of graph-readout logits, and the exact mismatch count of the
    first layer's selections when fed the exactly permuted input.
    """
    n = int(rng.integers(4, max_nodes + 1))
    g = random_connected_graph(n, rng.uniform(0.1, 0.5), rng)
    layers = int(rng.integers(1, max_layers + 1))
    width = int(rng.integers(1, max_width + 1))
    hops = int(rng.integers(1, max_hops + 1))
    m = random_model(g, activation, rng, layers, width, hops)
    p = Permutation.random(n, rng)
    x = rng.standard_normal((n, 1))
    y, tape = model_forward(m, x)
    y_perm, _ = model_forward(permute_model(m, p), permute_signal(x, p))
    node_dev = float(np.max(np.abs(y_perm - permute_signal(y, p))))

    mg = random_model(g, activation, rng, layers, width, hops, readout="graph")
    logits, _ = model_forward(mg, x)
    logits_perm, _ = model_forward(permute_model(mg, p), permute_signal(x, p))
    graph_dev = float(np.max(np.abs(logits_perm - logits)))

    selection_mismatch = 0
    if activation != "relu":
        layer = m.layers[0]
        u = tape.layers[0].u
        z, sel = local_activation_forward(activation, layer.act_weights, layer.table, u)
        ptable = permute_table(layer.table, p)
        z_p, sel_p = local_activation_forward(activation, layer.act_weights, ptable, permute_signal(u, p))
        selection_mismatch += int(np.sum(z_p != permute_signal(z, p)))
        for r, r_p in zip(sel.realizers, sel_p.realizers):
            selection_mismatch += int(np.sum(r_p != permute_signal(p.map[r], p)))
    return {"node_dev": node_dev, "graph_dev": graph_dev, "selection_mismatch": selection_mismatch}


def invariance_suite(activation, trials=100, seed=0, **kwargs):
    rng = np.random.default_rng(seed)
    results = [invariance_trial(activation, rng, **kwargs) for _ in range(trials)]
    return {
        "activation": activation,
        "trials": trials,
        "max_node_dev": max(r["node_dev"] for r in results),
        "max_graph_dev": max(r["graph_dev"] for r in results),
        "selection_mismatches": sum(r["selection_mismatch"] for r in results),
    }


def gradcheck_instance(activation, rng, step=1e-6, max_nodes=20, max_layers=2, max_width=3,
                       max_hops=2, max_resamples=50):
    """Finite-difference check of one random small model; resamples on ties."""
    for _ in range(max_resamples):
        n = int(rng.integers(4, max_nodes + 1))
        g = random_connected_graph(n, rng.uniform(0.15, 0.5), rng)
        layers = int(rng.integers(1, max_layers + 1))
        width = int(rng.integers(1, max_width + 1))
        hops = int(rng.integers(1, max_hops + 1))
        m = random_model(g, activation, rng, layers, width, hops, readout="graph",
                         n_classes=int(rng.integers(2, 5)))
        x = rng.standard_normal((n, 1))
        y = int(rng.integers(0, m.n_classes))
        try:
            return finite_difference_check(m, (x, y), step)
        except TieError:
            continue
    raise RuntimeError(f"no tie-free {activation} instance in {max_resamples} draws")


def gradcheck_suite(activation, instances=20, seed=0, step=1e-6, **kwargs):
    rng = np.random.default_rng(seed)
    errors = [gradcheck_instance(activation, rng, step, **kwargs) for _ in range(instances)]
    return {"activation": activation, "instances": instances, "max_rel_error": max(errors)}
