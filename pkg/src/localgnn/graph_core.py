"""Graphs, shift operators, k-hop neighborhoods and node relabelings.

Conventions used throughout the package:

* nodes are 0-based;
* an edge ``(src, dst, w)`` means ``dst`` listens to ``src``, so row ``dst``
  of the adjacency holds ``w`` at column ``src`` (``[A]_ij = a_ji``);
* graph signals are arrays whose node axis is ``-2`` and feature axis is
  ``-1`` (a bare ``(N,)`` vector is accepted wherever a single feature is).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

RESCALE_TOL = 1e-9
RESCALE_MAX_ITER = 10_000
RESCALE_SEED = 1234


class ShiftVariant(str, enum.Enum):
    WEIGHTED_ADJACENCY = "WeightedAdjacency"
    UNWEIGHTED_ADJACENCY = "UnweightedAdjacency"
    SELF_LOOP_ADJACENCY = "SelfLoopAdjacency"
    LAPLACIAN_WEIGHTED = "LaplacianWeighted"
    LAPLACIAN_UNWEIGHTED = "LaplacianUnweighted"
    RESCALED_WEIGHTED_ADJACENCY = "RescaledWeightedAdjacency"


class ConvergenceError(RuntimeError):
    """Raised when power iteration does not settle within its iteration cap."""


@dataclass(frozen=True)
class Graph:
    """Edge-list graph on nodes ``0..n-1``.

    Undirected graphs must list both orientations of every edge with equal
    weights; :meth:`undirected` builds that closure from one orientation.
    """

    n: int
    edges: tuple[tuple[int, int, float], ...]
    directed: bool = False

    def __post_init__(self):
        if self.n <= 0:
            raise ValueError(f"graph needs at least one node, got n={self.n}")
        edges = tuple((int(s), int(d), float(w)) for s, d, w in self.edges)
        object.__setattr__(self, "edges", edges)
        seen = {}
        for s, d, w in edges:
            if not (0 <= s < self.n and 0 <= d < self.n):
                raise ValueError(f"edge ({s}, {d}) out of range for n={self.n}")
            if (s, d) in seen:
                raise ValueError(f"duplicate edge ({s}, {d})")
            seen[(s, d)] = w
        if not self.directed:
            for (s, d), w in seen.items():
                if seen.get((d, s)) != w:
                    raise ValueError(
                        f"undirected graph is missing reverse edge ({d}, {s}) "
                        f"with weight {w}"
                    )

    @classmethod
    def undirected(cls, n, pairs):
        """Build an undirected graph from ``(i, j)`` or ``(i, j, w)`` items, one orientation each."""
        edges = {}
        for item in pairs:
            i, j = int(item[0]), int(item[1])
            w = float(item[2]) if len(item) > 2 else 1.0
            if i == j:
                raise ValueError(f"self loop at node {i}")
            edges[(i, j)] = w
            edges[(j, i)] = w
        return cls(n, tuple((i, j, w) for (i, j), w in sorted(edges.items())), False)

    @cached_property
    def arrays(self):
        if not self.edges:
            empty = np.zeros(0, dtype=np.int64)
            return empty, empty.copy(), np.zeros(0)
        src, dst, w = zip(*self.edges)
        return np.array(src, np.int64), np.array(dst, np.int64), np.array(w, float)

    @property
    def num_edges(self):
        return len(self.edges)

    def degrees(self):
        """In-degree of every node (equals the degree for undirected graphs)."""
        _, dst, _ = self.arrays
        return np.bincount(dst, minlength=self.n)

    def is_connected(self):
        """Weak connectivity."""
        if self.n == 1:
            return True
        src, dst, _ = self.arrays
        adj = sp.coo_matrix((np.ones(len(src)), (src, dst)), shape=(self.n, self.n))
        ncomp, _ = sp.csgraph.connected_components(adj, directed=True, connection="weak")
        return ncomp == 1


@dataclass(frozen=True, eq=False)
class ShiftOperator:
    """Sparse ``n x n`` graph shift operator in CSR form.

    ``matrix`` rows are the per-node lists of ``(column, value)`` pairs with
    sorted columns. Treat the matrix as read-only.
    """

    matrix: sp.csr_matrix
    variant: ShiftVariant

    def __post_init__(self):
        m = sp.csr_matrix(self.matrix, dtype=float)
        if m.shape[0] != m.shape[1]:
            raise ValueError(f"shift operator must be square, got {m.shape}")
        m.sum_duplicates()
        m.sort_indices()
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "variant", ShiftVariant(self.variant))

    @property
    def n(self):
        return self.matrix.shape[0]

    @property
    def rows(self):
        """Per-row lists of ``(column, value)``; mostly useful for inspection."""
        m = self.matrix
        return [
            list(zip(m.indices[m.indptr[i]:m.indptr[i + 1]].tolist(),
                     m.data[m.indptr[i]:m.indptr[i + 1]].tolist()))
            for i in range(self.n)
        ]

    def toarray(self):
        return self.matrix.toarray()

    def pattern(self):
        """Structural nonzero pattern as a 0/1 CSR matrix (explicit zeros dropped)."""
        m = self.matrix.copy()
        m.eliminate_zeros()
        m.data = np.ones_like(m.data)
        return m


def build_shift_operator(g, variant):
    """Matrix representation of ``g`` of the requested kind.

    ``RescaledWeightedAdjacency`` goes through :func:`spectral_rescale` with
    the default tolerance.
    """
    if not isinstance(g, Graph):
        raise TypeError("expected a Graph")
    try:
        variant = ShiftVariant(variant)
    except ValueError:
        raise ValueError(f"unknown shift operator variant {variant!r}") from None
    n = g.n
    src, dst, w = g.arrays
    ones = np.ones_like(w)
    if variant is ShiftVariant.RESCALED_WEIGHTED_ADJACENCY:
        return spectral_rescale(build_shift_operator(g, ShiftVariant.WEIGHTED_ADJACENCY))

    weighted = variant in (ShiftVariant.WEIGHTED_ADJACENCY, ShiftVariant.LAPLACIAN_WEIGHTED)
    adj = sp.csr_matrix((w if weighted else ones, (dst, src)), shape=(n, n))
    if variant in (ShiftVariant.WEIGHTED_ADJACENCY, ShiftVariant.UNWEIGHTED_ADJACENCY):
        mat = adj
    elif variant is ShiftVariant.SELF_LOOP_ADJACENCY:
        mat = adj + sp.identity(n, format="csr")
    else:
        mat = sp.diags(np.asarray(adj.sum(axis=1)).ravel()) - adj
    return ShiftOperator(sp.csr_matrix(mat), variant)


def spectral_rescale(s, tol=RESCALE_TOL, max_iter=RESCALE_MAX_ITER, seed=RESCALE_SEED):
    """Divide a weighted adjacency by its largest eigenvalue magnitude.

    The magnitude is estimated by power iteration with the norm-ratio
    quotient ``||S v||`` for unit ``v``. That quotient is ``sqrt`` of the
    Rayleigh quotient of ``S^T S``; unlike ``v^T S v`` it also converges for
    bipartite graphs, whose spectrum is symmetric about zero. Iteration stops
    when two successive estimates differ by less than ``tol``.
    """
    if s.variant is not ShiftVariant.WEIGHTED_ADJACENCY:
        raise ValueError(f"spectral_rescale expects a WeightedAdjacency, got {s.variant.value}")
    m = s.matrix
    if m.nnz == 0 or not np.any(m.data):
        raise ValueError("cannot rescale an all-zero shift operator")
    rng = np.random.default_rng(seed)
    v = rng.uniform(0.5, 1.5, size=s.n)
    v /= np.linalg.norm(v)
    prev = None
    for _ in range(max_iter):
        y = m @ v
        est = np.linalg.norm(y)
        if est == 0.0:
            raise ConvergenceError("power iteration collapsed to the zero vector")
        if prev is not None and abs(est - prev) < tol:
            break
        prev = est
        v = y / est
    else:
        raise ConvergenceError(
            f"power iteration did not converge to tol={tol} within {max_iter} iterations"
        )
    return ShiftOperator(m / est, ShiftVariant.RESCALED_WEIGHTED_ADJACENCY)


@dataclass(frozen=True, eq=False)
class NeighborhoodTable:
    """Exact-hop neighborhoods ``N_i^k = {j : [S^k]_ij != 0}`` for ``k = 0..max_hop``.

    ``hops[k]`` is a CSR-style pair ``(indptr, indices)`` whose row ``i``
    lists ``N_i^k`` in increasing order.
    """

    n: int
    max_hop: int
    hops: tuple[tuple[np.ndarray, np.ndarray], ...] = field(repr=False)

    def hood(self, i, k):
        indptr, indices = self.hops[k]
        return indices[indptr[i]:indptr[i + 1]]

    def __getitem__(self, i):
        return [self.hood(i, k) for k in range(self.max_hop + 1)]

    def as_lists(self):
        """Nested ``[node][hop] -> list of ints`` view."""
        return [[self.hood(i, k).tolist() for k in range(self.max_hop + 1)] for i in range(self.n)]

    def sizes(self, k):
        indptr, _ = self.hops[k]
        return np.diff(indptr)

    def max_degree(self):
        """Largest 1-hop neighborhood size, the ``d`` of the complexity bounds."""
        if self.max_hop < 1:
            return 1
        return int(self.sizes(1).max())


def neighborhoods(s, max_hop):
    """Neighborhood table of ``s`` up to ``max_hop`` hops.

    Patterns of ``S^k`` are propagated with 0/1 sparse products, so numeric
    cancellation in ``S^k`` can never hide a structural neighbor.
    """
    if max_hop < 0:
        raise ValueError(f"max_hop must be non-negative, got {max_hop}")
    n = s.n
    pat = s.pattern().astype(np.int64)
    reach = sp.identity(n, dtype=np.int64, format="csr")
    hops = []
    for k in range(max_hop + 1):
        if k > 0:
            reach = reach @ pat
            reach.data = np.ones_like(reach.data)
            reach.sort_indices()
        hops.append((reach.indptr.astype(np.int64), reach.indices.astype(np.int64)))
    return NeighborhoodTable(n, max_hop, tuple(hops))


def _as_nodes_first(x, n):
    x = np.asarray(x, dtype=float)
    if x.ndim == 0 or (x.shape[0] if x.ndim == 1 else x.shape[-2]) != n:
        raise ValueError(f"signal shape {x.shape} does not match {n} nodes")
    return x


def apply_shift(s, x):
    """``S x`` applied to every feature (and every sample of a batch)."""
    x = _as_nodes_first(x, s.n)
    m = s.matrix
    if x.ndim <= 2:
        return np.asarray(m @ x)
    lead = x.shape[:-2]
    f = x.shape[-1]
    flat = np.moveaxis(x, -2, 0).reshape(s.n, -1)
    y = np.asarray(m @ flat).reshape((s.n,) + lead + (f,))
    return np.moveaxis(y, 0, -2)


def apply_shift_transpose(s, x):
    """``S^T x``; used by the backward pass."""
    x = _as_nodes_first(x, s.n)
    mt = s.matrix.T.tocsr()
    if x.ndim <= 2:
        return np.asarray(mt @ x)
    lead = x.shape[:-2]
    f = x.shape[-1]
    flat = np.moveaxis(x, -2, 0).reshape(s.n, -1)
    y = np.asarray(mt @ flat).reshape((s.n,) + lead + (f,))
    return np.moveaxis(y, 0, -2)


@dataclass(frozen=True, eq=False)
class Permutation:
    """Node relabeling: old node ``i`` becomes new node ``map[i]``.

    With ``P[i, map[i]] = 1`` this is the permutation matrix whose transpose
    relabels signals (``x' = P^T x``) and operators (``S' = P^T S P``).
    """

    map: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.map, dtype=np.int64)
        n = m.size
        if m.ndim != 1 or not np.array_equal(np.sort(m), np.arange(n)):
            raise ValueError("permutation map must be a bijection on 0..n-1")
        m.setflags(write=False)
        object.__setattr__(self, "map", m)

    @property
    def n(self):
        return self.map.size

    @classmethod
    def identity(cls, n):
        return cls(np.arange(n))

    @classmethod
    def random(cls, n, rng):
        return cls(rng.permutation(n))

    def inverse(self):
        inv = np.empty_like(self.map)
        inv[self.map] = np.arange(self.n)
        return Permutation(inv)

    def matrix(self):
        p = np.zeros((self.n, self.n))
        p[np.arange(self.n), self.map] = 1.0
        return p


def _check_size(p, n):
    if not isinstance(p, Permutation):
        p = Permutation(p)
    if p.n != n:
        raise ValueError(f"permutation of size {p.n} applied to {n} nodes")
    return p


def permute(s, p):
    """Relabeled shift operator ``P^T S P``."""
    p = _check_size(p, s.n)
    coo = s.matrix.tocoo()
    m = sp.csr_matrix((coo.data, (p.map[coo.row], p.map[coo.col])), shape=coo.shape)
    return ShiftOperator(m, s.variant)


def permute_signal(x, p):
    """Relabeled signal ``P^T x`` (node axis ``-2``, or ``0`` for a bare vector)."""
    x = np.asarray(x)
    axis = 0 if x.ndim == 1 else x.ndim - 2
    p = _check_size(p, x.shape[axis])
    # new node map[i] holds old node i
    return np.take(x, p.inverse().map, axis=axis)


def permute_graph(g, p):
    p = _check_size(p, g.n)
    edges = tuple(sorted((int(p.map[s]), int(p.map[d]), w) for s, d, w in g.edges))
    return Graph(g.n, edges, g.directed)
