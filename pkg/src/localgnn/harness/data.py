"""Random graph families and the synthetic source-localization task."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..graph_core import Graph, ShiftVariant, apply_shift, build_shift_operator
from ..optim import Split

MAX_GRAPH_RETRIES = 1000


class RetryLimitError(RuntimeError):
    pass


def _graph_from_upper(n, upper):
    i, j = np.nonzero(np.triu(upper, 1))
    return Graph.undirected(n, zip(i.tolist(), j.tolist()))


def gen_er_graph(n, p, seed, max_retries=MAX_GRAPH_RETRIES):
    """Connected undirected Erdos-Renyi graph; each pair is an edge with probability ``p``."""
    if n < 2:
        raise ValueError(f"need n >= 2, got {n}")
    if not 0 < p < 1:
        raise ValueError(f"edge probability must lie in (0, 1), got {p}")
    rng = np.random.default_rng(seed)
    for _ in range(max_retries):
        g = _graph_from_upper(n, rng.random((n, n)) < p)
        if g.is_connected():
            return g
    raise RetryLimitError(f"no connected ER({n}, {p}) draw in {max_retries} attempts")


def geometric_graph_from_points(points, radius):
    points = np.asarray(points, dtype=float)
    diff = points[:, None, :] - points[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=-1))
    return _graph_from_upper(len(points), dist < radius)


def gen_geometric_graph(n, radius, seed, max_retries=MAX_GRAPH_RETRIES):
    """Connected random geometric graph on the unit square (edge iff distance < radius)."""
    if n < 2:
        raise ValueError(f"need n >= 2, got {n}")
    if not 0 < radius <= np.sqrt(2):
        raise ValueError(f"radius must lie in (0, sqrt(2)], got {radius}")
    rng = np.random.default_rng(seed)
    for _ in range(max_retries):
        g = geometric_graph_from_points(rng.random((n, 2)), radius)
        if g.is_connected():
            return g
    raise RetryLimitError(f"no connected geometric({n}, {radius}) draw in {max_retries} attempts")


@dataclass(eq=False)
class SourceLocDataset:
    graph: Graph
    diffusion: object
    sources: np.ndarray
    train: Split
    val: Split
    test: Split
    times: dict

    @property
    def n_classes(self):
        return len(self.sources)


def diffusion_bank(w, sources, t_max):
    """``bank[t, c] = W^t e_{sources[c]}`` for ``t = 0..t_max`` as ``(t_max+1, C, N)``."""
    n = w.n
    cur = np.zeros((n, len(sources)))
    cur[sources, np.arange(len(sources))] = 1.0
    bank = np.empty((t_max + 1, len(sources), n))
    for t in range(t_max + 1):
        bank[t] = cur.T
        cur = apply_shift(w, cur)
    return bank


def gen_source_localization(graph, num_classes, samples, t_max=10, seed=0, diffusion=None):
    """Diffused one-hot signals labeled by their source.

    ``samples`` is ``(n_train, n_val, n_test)``. Source nodes are drawn
    without replacement; every sample draws its class and its diffusion time
    ``t`` in ``0..t_max`` uniformly and observes ``x = W^t e_source``, with
    ``W`` the spectrally rescaled weighted adjacency unless ``diffusion`` is
    given.
    """
    if num_classes > graph.n or num_classes < 1:
        raise ValueError(f"cannot draw {num_classes} sources from {graph.n} nodes")
    if t_max < 0:
        raise ValueError("t_max must be non-negative")
    rng = np.random.default_rng(seed)
    w = diffusion if diffusion is not None else build_shift_operator(
        graph, ShiftVariant.RESCALED_WEIGHTED_ADJACENCY
    )
    sources = np.sort(rng.choice(graph.n, size=num_classes, replace=False))
    bank = diffusion_bank(w, sources, t_max)
    splits, times = [], {}
    for name, count in zip(("train", "val", "test"), samples):
        labels = rng.integers(0, num_classes, size=count)
        t = rng.integers(0, t_max + 1, size=count)
        splits.append(Split(bank[t, labels][:, :, None], labels))
        times[name] = t
    return SourceLocDataset(graph, w, sources, *splits, times)
