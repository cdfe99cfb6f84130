"""Linear graph convolutions and the median/max neighborhood activations.

Array layout: node axis ``-2``, feature axis ``-1``, any leading batch axes.
Single-feature helpers also take a bare ``(N,)`` vector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .graph_core import apply_shift

LOCAL_KINDS = ("median", "max")


class EmptyNeighborhoodError(ValueError):
    pass


@dataclass(eq=False)
class ConvTaps:
    """Filter-bank coefficients ``taps[f_out, f_in, k]``."""

    taps: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.taps, dtype=float)
        if t.ndim != 3 or min(t.shape) <= 0:
            raise ValueError(f"taps must be a non-empty (f_out, f_in, K) array, got {t.shape}")
        if not np.all(np.isfinite(t)):
            raise ValueError("taps must be finite")
        self.taps = t

    @property
    def f_out(self):
        return self.taps.shape[0]

    @property
    def f_in(self):
        return self.taps.shape[1]

    @property
    def k_taps(self):
        return self.taps.shape[2]

    @classmethod
    def init(cls, f_out, f_in, k_taps, rng):
        """Uniform in ``+-(f_in * K) ** -0.5``."""
        bound = (f_in * k_taps) ** -0.5
        return cls(rng.uniform(-bound, bound, size=(f_out, f_in, k_taps)))


@dataclass(eq=False)
class ActivationWeights:
    """Per-hop weights of a multiresolution median/max filter.

    ``weights`` has shape ``(max_hop + 1,)`` when shared across features and
    ``(F, max_hop + 1)`` otherwise.
    """

    weights: np.ndarray
    shared: bool = True

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != (1 if self.shared else 2) or w.shape[-1] < 1:
            raise ValueError(f"bad activation weight shape {w.shape} (shared={self.shared})")
        if not np.all(np.isfinite(w)):
            raise ValueError("activation weights must be finite")
        self.weights = w

    @property
    def max_hop(self):
        return self.weights.shape[-1] - 1

    @classmethod
    def init(cls, max_hop, n_features=1, shared=True, rng=None):
        """Identity passthrough ``[1, 0, ..., 0]``, or U(-0.1, 0.1) when ``rng`` is given."""
        shape = (max_hop + 1,) if shared else (n_features, max_hop + 1)
        if rng is not None:
            return cls(rng.uniform(-0.1, 0.1, size=shape), shared)
        w = np.zeros(shape)
        w[..., 0] = 1.0
        return cls(w, shared)

    def per_hop(self, n_features):
        """Weights as an ``(F, max_hop + 1)`` array."""
        if self.shared:
            return np.broadcast_to(self.weights, (n_features, self.weights.size))
        if self.weights.shape[0] != n_features:
            raise ValueError(
                f"activation has weights for {self.weights.shape[0]} features, got {n_features}"
            )
        return self.weights


@dataclass(eq=False)
class SelectionRecord:
    """What a local activation picked, kept for the backward pass.

    ``realizers[k]`` has the shape of the activation input and stores, for
    every node, the neighbor whose value the hop-``k`` operator returned.
    ``values[k]`` stores the operator output itself.
    """

    kind: str
    realizers: list
    values: list

    @property
    def max_hop(self):
        return len(self.realizers) - 1


def graph_convolution(s, h, x):
    """``sum_k h[k] S^k x`` by repeated shifts."""
    h = np.asarray(h, dtype=float).ravel()
    if h.size == 0:
        raise ValueError("empty tap vector")
    x = np.asarray(x, dtype=float)
    y = x
    z = h[0] * y
    for hk in h[1:]:
        y = apply_shift(s, y)
        z = z + hk * y
    return z


def shift_stack(s, x, k_taps):
    """``[x, Sx, ..., S^{K-1} x]`` stacked on a new leading axis."""
    out = np.empty((k_taps,) + np.shape(x))
    out[0] = x
    for k in range(1, k_taps):
        out[k] = apply_shift(s, out[k - 1])
    return out


def conv_bank_forward(s, taps, x, return_shifts=False):
    """Filter bank ``u^f = sum_g sum_k h_k^{fg} S^k x^g``.

    ``x`` has shape ``(..., N, f_in)``; the result ``(..., N, f_out)``. With
    ``return_shifts`` the stacked ``S^k x`` are returned too (the backward
    pass reuses them).
    """
    if not isinstance(taps, ConvTaps):
        taps = ConvTaps(taps)
    x = np.asarray(x, dtype=float)
    if x.ndim < 2 or x.shape[-1] != taps.f_in:
        raise ValueError(f"input with shape {x.shape} does not have {taps.f_in} features")
    if x.shape[-2] != s.n:
        raise ValueError(f"input has {x.shape[-2]} nodes, shift operator {s.n}")
    zs = shift_stack(s, x, taps.k_taps)
    u = np.einsum("k...ng,fgk->...nf", zs, taps.taps, optimize=True)
    return (u, zs) if return_shifts else u


def _rows_view(x):
    """Move features ahead of nodes and flatten to contiguous ``(rows, N)``."""
    if x.ndim == 1:
        return np.ascontiguousarray(x[None, :])
    return np.ascontiguousarray(np.moveaxis(x, -1, -2)).reshape(-1, x.shape[-2])


def _from_rows(rows, like):
    if like.ndim == 1:
        return rows[0]
    shape = like.shape[:-2] + (like.shape[-1], like.shape[-2])
    return np.moveaxis(rows.reshape(shape), -1, -2)


def _check_hood(hood, n):
    indptr, indices = hood
    indptr = np.asarray(indptr, dtype=np.int64)
    indices = np.asarray(indices, dtype=np.int64)
    if indptr.size != n + 1:
        raise ValueError(f"neighborhood has {indptr.size - 1} rows, signal has {n} nodes")
    empty = np.flatnonzero(np.diff(indptr) == 0)
    if empty.size:
        raise EmptyNeighborhoodError(f"node {empty[0]} has an empty neighborhood")
    return indptr, indices


def _order_statistic(kind, hood, x, force_select=False):
    x = np.asarray(x, dtype=float)
    n = x.shape[0] if x.ndim == 1 else x.shape[-2]
    indptr, indices = _check_hood(hood, n)
    rows = _rows_view(x)
    out = np.empty_like(rows)
    real = np.empty(rows.shape, dtype=np.int64)
    if kind == "median":
        _kernels.median_rows(rows, indptr, indices, out, real, force_select)
    elif kind == "max":
        _kernels.max_rows(rows, indptr, indices, out, real)
    else:
        raise ValueError(f"unknown local activation kind {kind!r}")
    return _from_rows(out, x), _from_rows(real, x)


def median_operator(hood, x, force_select=False):
    """Neighborhood median of ``x`` and the nodes realizing it.

    ``hood`` is a CSR pair ``(indptr, indices)`` such as
    ``table.hops[k]``. Even-sized neighborhoods return the upper median.
    ``force_select`` skips the bitmap path of the kernel (for testing).
    """
    return _order_statistic("median", hood, x, force_select)


def max_operator(hood, x):
    """Neighborhood maximum of ``x`` and the nodes realizing it."""
    return _order_statistic("max", hood, x)


def _operator(kind, hood, x):
    return median_operator(hood, x) if kind == "median" else max_operator(hood, x)


def local_activation_forward(kind, w, table, u):
    """Multiresolution median/max filter ``sum_k w_k op(S^k, u)`` per feature.

    Returns the activated signal and the :class:`SelectionRecord` that
    :func:`localgnn.backprop.activation_backward` needs.
    """
    if kind not in LOCAL_KINDS:
        raise ValueError(f"unknown local activation kind {kind!r}")
    if not isinstance(w, ActivationWeights):
        w = ActivationWeights(w, shared=np.ndim(w) == 1)
    if table.max_hop != w.max_hop:
        raise ValueError(f"table has {table.max_hop} hops, weights have {w.max_hop}")
    u = np.asarray(u, dtype=float)
    if u.ndim < 2:
        raise ValueError("activation input needs a feature axis")
    wf = w.per_hop(u.shape[-1])
    realizers, values = [], []
    z = wf[:, 0] * u
    realizers.append(np.broadcast_to(np.arange(u.shape[-2])[:, None], u.shape))
    values.append(u)
    for k in range(1, w.max_hop + 1):
        v, r = _operator(kind, table.hops[k], u)
        z = z + wf[:, k] * v
        realizers.append(r)
        values.append(v)
    return z, SelectionRecord(kind, realizers, values)


def relu_forward(u):
    """Elementwise ``max(0, u)`` and the positivity mask."""
    u = np.asarray(u, dtype=float)
    mask = u > 0
    return np.where(mask, u, 0.0), mask
