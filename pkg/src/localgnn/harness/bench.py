"""Forward-pass timing of the local activations against graph size."""

from __future__ import annotations

import time

import networkx as nx
import numpy as np

from ..filters import ActivationWeights, local_activation_forward, relu_forward
from ..graph_core import Graph, ShiftVariant, build_shift_operator, neighborhoods


def regular_graph(n, degree, seed):
    """Random ``degree``-regular graph (degree-capped, so ``d`` does not grow with ``n``)."""
    g = nx.random_regular_graph(degree, n, seed=seed)
    return Graph.undirected(n, g.edges())


def time_activation(kind, graph, hops, features, batch, repeats, seed):
    rng = np.random.default_rng(seed)
    u = rng.standard_normal((batch, graph.n, features))
    if kind == "relu":
        fn = lambda: relu_forward(u)  # noqa: E731
        d = int(graph.degrees().max())
    else:
        table = neighborhoods(build_shift_operator(graph, ShiftVariant.SELF_LOOP_ADJACENCY), hops)
        w = ActivationWeights(rng.uniform(-1, 1, size=hops + 1))
        fn = lambda: local_activation_forward(kind, w, table, u)  # noqa: E731
        d = table.max_degree()
    fn()  # warm-up (JIT compilation, caches)
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best, d


def complexity_benchmark(kinds=("median", "max"), n=1000, degree=6, hops=2, features=8,
                         batch=4, repeats=5, seed=0):
    """Best-of-``repeats`` forward time at ``n`` and ``2n`` nodes.

    Returns one record per activation kind with both timings and their ratio
    (about 2 when the cost is linear in ``n``).
    """
    records = []
    graphs = {size: regular_graph(size, degree, seed + size) for size in (n, 2 * n)}
    for kind in kinds:
        times = {}
        for size, g in graphs.items():
            times[size], d = time_activation(kind, g, hops, features, batch, repeats, seed)
        records.append({
            "kind": kind,
            "hops": hops if kind != "relu" else 0,
            "degree": degree,
            "max_hood": d,
            "n": n,
            "seconds_n": times[n],
            "seconds_2n": times[2 * n],
            "ratio": times[2 * n] / times[n],
        })
    return records
