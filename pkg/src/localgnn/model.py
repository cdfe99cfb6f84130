"""GNN models built from filter banks, activations and a dense readout."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .filters import (
    LOCAL_KINDS,
    ActivationWeights,
    ConvTaps,
    SelectionRecord,
    conv_bank_forward,
    local_activation_forward,
    relu_forward,
)
from .graph_core import (
    NeighborhoodTable,
    Permutation,
    ShiftOperator,
    ShiftVariant,
    build_shift_operator,
    neighborhoods,
    permute,
)

ACTIVATIONS = ("relu",) + LOCAL_KINDS
READOUTS = ("graph", "node")


@dataclass(eq=False)
class GnnLayer:
    taps: ConvTaps
    activation: str
    shift: ShiftOperator
    act_weights: ActivationWeights | None = None
    table: NeighborhoodTable | None = None

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.activation in LOCAL_KINDS:
            if self.act_weights is None or self.table is None:
                raise ValueError(f"{self.activation} layer needs activation weights and a table")
            if self.table.max_hop != self.act_weights.max_hop:
                raise ValueError(
                    f"table reaches {self.table.max_hop} hops, weights {self.act_weights.max_hop}"
                )
            if not self.act_weights.shared and self.act_weights.weights.shape[0] != self.taps.f_out:
                raise ValueError("per-feature activation weights must match the layer width")
        elif self.act_weights is not None:
            raise ValueError("relu layers take no activation weights")


@dataclass(eq=False)
class Readout:
    """Affine readout.

    ``kind="graph"`` flattens the ``N x F`` features node-major and maps
    them to ``C`` logits; ``kind="node"`` maps each node's ``F`` features to
    ``C`` logits.
    """

    kind: str
    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        if self.kind not in READOUTS:
            raise ValueError(f"unknown readout kind {self.kind!r}")
        self.weight = np.asarray(self.weight, dtype=float)
        self.bias = np.asarray(self.bias, dtype=float)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[1],):
            raise ValueError(f"readout shapes {self.weight.shape} / {self.bias.shape} disagree")

    @property
    def n_classes(self):
        return self.bias.size


@dataclass(eq=False)
class GnnModel:
    layers: list[GnnLayer]
    readout: Readout

    def __post_init__(self):
        if not self.layers:
            raise ValueError("model needs at least one layer")
        n = self.layers[0].shift.n
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if nxt.taps.f_in != prev.taps.f_out:
                raise ValueError(
                    f"layer widths do not chain: {prev.taps.f_out} -> {nxt.taps.f_in}"
                )
        for layer in self.layers:
            if layer.shift.n != n or (layer.table is not None and layer.table.n != n):
                raise ValueError("all layers must live on the same node set")
        f_last = self.layers[-1].taps.f_out
        rows = n * f_last if self.readout.kind == "graph" else f_last
        if self.readout.weight.shape[0] != rows:
            raise ValueError(f"readout expects {self.readout.weight.shape[0]} inputs, model gives {rows}")

    @property
    def n_nodes(self):
        return self.layers[0].shift.n

    @property
    def n_features_in(self):
        return self.layers[0].taps.f_in

    @property
    def n_classes(self):
        return self.readout.n_classes

    def parameters(self):
        """Name -> array mapping of every trainable tensor (live references)."""
        params = {}
        for i, layer in enumerate(self.layers):
            params[f"layer{i}.taps"] = layer.taps.taps
            if layer.act_weights is not None:
                params[f"layer{i}.act"] = layer.act_weights.weights
        params["readout.weight"] = self.readout.weight
        params["readout.bias"] = self.readout.bias
        return params

    def conv_param_count(self):
        """Parameters of the graph layers: filter taps plus activation weights."""
        total = 0
        for layer in self.layers:
            total += layer.taps.taps.size
            if layer.act_weights is not None:
                total += layer.act_weights.weights.size
        return total

    def param_count(self):
        return sum(a.size for a in self.parameters().values())

    def copy(self):
        layers = [
            GnnLayer(
                ConvTaps(l.taps.taps.copy()),
                l.activation,
                l.shift,
                None if l.act_weights is None
                else ActivationWeights(l.act_weights.weights.copy(), l.act_weights.shared),
                l.table,
            )
            for l in self.layers
        ]
        r = self.readout
        return GnnModel(layers, Readout(r.kind, r.weight.copy(), r.bias.copy()))


def build_model(
    graph,
    activation,
    hops=1,
    features=(32,),
    taps=5,
    n_features_in=1,
    n_classes=10,
    readout="graph",
    conv_variant=ShiftVariant.RESCALED_WEIGHTED_ADJACENCY,
    hood_variant=ShiftVariant.SELF_LOOP_ADJACENCY,
    shared=True,
    random_act_init=False,
    seed=0,
):
    """Model with one filter bank + activation per entry of ``features``.

    Convolutions use ``conv_variant`` and local activations take their
    neighborhoods from ``hood_variant``. For ``activation="relu"`` the
    ``hops`` argument is ignored.
    """
    rng = np.random.default_rng(seed)
    conv_shift = build_shift_operator(graph, conv_variant)
    table = None
    if activation in LOCAL_KINDS:
        table = neighborhoods(build_shift_operator(graph, hood_variant), hops)
    layers = []
    f_in = n_features_in
    for f_out in features:
        act_w = None
        if activation in LOCAL_KINDS:
            act_w = ActivationWeights.init(
                hops, f_out, shared, rng if random_act_init else None
            )
        layers.append(GnnLayer(ConvTaps.init(f_out, f_in, taps, rng), activation, conv_shift, act_w, table))
        f_in = f_out
    rows = graph.n * f_in if readout == "graph" else f_in
    bound = rows ** -0.5
    head = Readout(
        readout,
        rng.uniform(-bound, bound, size=(rows, n_classes)),
        rng.uniform(-bound, bound, size=n_classes),
    )
    return GnnModel(layers, head)


@dataclass(eq=False)
class LayerTape:
    x_in: np.ndarray
    shifts: np.ndarray
    u: np.ndarray
    x_out: np.ndarray
    selection: SelectionRecord | None = None
    mask: np.ndarray | None = None


@dataclass(eq=False)
class ForwardTape:
    layers: list[LayerTape]
    readout_in: np.ndarray
    logits: np.ndarray
    dropout_mask: np.ndarray | None = None
    batched: bool = True
    extras: dict = field(default_factory=dict)


def readout_forward(kind, weight, bias, features):
    """Affine readout of ``(..., N, F)`` features."""
    features = np.asarray(features, dtype=float)
    if kind == "graph":
        flat = features.reshape(features.shape[:-2] + (-1,))
        if flat.shape[-1] != weight.shape[0]:
            raise ValueError(f"readout expects {weight.shape[0]} inputs, got {flat.shape[-1]}")
        return flat @ weight + bias
    if kind == "node":
        if features.shape[-1] != weight.shape[0]:
            raise ValueError(f"readout expects {weight.shape[0]} features, got {features.shape[-1]}")
        return features @ weight + bias
    raise ValueError(f"unknown readout kind {kind!r}")


def _activate(layer, u):
    if layer.activation == "relu":
        z, mask = relu_forward(u)
        return z, None, mask
    z, sel = local_activation_forward(layer.activation, layer.act_weights, layer.table, u)
    return z, sel, None


def model_forward(m, x, dropout_mask=None):
    """Run ``m`` on one signal ``(N, F0)`` or a batch ``(B, N, F0)``.

    ``dropout_mask`` (same shape as the readout input, or broadcastable to
    it) multiplies the last layer's features before the readout; training
    passes inverted node-dropout masks here.

    Returns ``(logits, tape)``. Logits are ``(C,)``/``(B, C)`` for a graph
    readout and ``(N, C)``/``(B, N, C)`` for a node readout.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 1 and m.n_features_in == 1:
        x = x[:, None]
    batched = x.ndim == 3
    if not batched:
        x = x[None]
    if x.ndim != 3 or x.shape[1:] != (m.n_nodes, m.n_features_in):
        raise ValueError(
            f"expected input (B, {m.n_nodes}, {m.n_features_in}), got {x.shape}"
        )
    tapes = []
    h = x
    for layer in m.layers:
        u, zs = conv_bank_forward(layer.shift, layer.taps, h, return_shifts=True)
        z, sel, mask = _activate(layer, u)
        tapes.append(LayerTape(h, zs, u, z, sel, mask))
        h = z
    if dropout_mask is not None:
        h = h * dropout_mask
    logits = readout_forward(m.readout.kind, m.readout.weight, m.readout.bias, h)
    tape = ForwardTape(tapes, h, logits, dropout_mask, batched)
    return (logits if batched else logits[0]), tape


def softmax(logits):
    z = np.asarray(logits, dtype=float)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, labels, reduction="mean"):
    """Cross-entropy of softmax(logits) against integer labels.

    ``logits`` is ``(..., C)`` and ``labels`` has the leading shape. The loss
    is averaged (``"mean"``) or summed (``"sum"``) over all labelled entries;
    the gradient is with respect to the reduced loss.
    """
    logits = np.asarray(logits, dtype=float)
    labels = np.asarray(labels)
    c = logits.shape[-1]
    if labels.shape != logits.shape[:-1]:
        raise ValueError(f"labels shape {labels.shape} does not match logits {logits.shape}")
    if not np.issubdtype(labels.dtype, np.integer):
        raise ValueError("labels must be integers")
    if np.any(labels < 0) or np.any(labels >= c):
        raise ValueError(f"label out of range for {c} classes")
    if not np.all(np.isfinite(logits)):
        raise ValueError("non-finite logits")
    shifted = logits - logits.max(axis=-1, keepdims=True)
    logsumexp = np.log(np.exp(shifted).sum(axis=-1))
    picked = np.take_along_axis(shifted, labels[..., None], axis=-1)[..., 0]
    per = logsumexp - picked
    grad = np.exp(shifted - logsumexp[..., None])
    np.put_along_axis(grad, labels[..., None], np.take_along_axis(grad, labels[..., None], -1) - 1.0, -1)
    if reduction == "mean":
        count = max(per.size, 1)
        return float(per.sum() / count), grad / count
    if reduction == "sum":
        return float(per.sum()), grad
    raise ValueError(f"unknown reduction {reduction!r}")


def squared_error(pred, target, reduction="mean"):
    """``0.5 * ||pred - target||^2`` per sample, reduced over samples."""
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ValueError(f"prediction {pred.shape} and target {target.shape} differ")
    diff = pred - target
    n = diff.shape[0] if (diff.ndim > 1 and reduction == "mean") else 1
    loss = 0.5 * float(np.sum(diff * diff)) / n
    return loss, diff / n


def permute_model(m, p):
    """Same parameters on the relabeled graph.

    Shift operators and neighborhood tables are relabeled; for a graph
    readout the node blocks of the readout weight are relabeled as well, so
    that logits are unchanged.
    """
    p = p if isinstance(p, Permutation) else Permutation(p)
    shift_cache, table_cache = {}, {}
    layers = []
    for l in m.layers:
        key = id(l.shift)
        if key not in shift_cache:
            shift_cache[key] = permute(l.shift, p)
        table = None
        if l.table is not None:
            tkey = id(l.table)
            if tkey not in table_cache:
                table_cache[tkey] = permute_table(l.table, p)
            table = table_cache[tkey]
        layers.append(GnnLayer(l.taps, l.activation, shift_cache[key], l.act_weights, table))
    r = m.readout
    weight = r.weight
    if r.kind == "graph":
        f = weight.shape[0] // m.n_nodes
        blocks = weight.reshape(m.n_nodes, f, -1)
        weight = blocks[p.inverse().map].reshape(weight.shape)
    return GnnModel(layers, Readout(r.kind, weight, r.bias))


def permute_table(table, p):
    """Relabel a neighborhood table (same result as rebuilding it from ``P^T S P``)."""
    inv = p.inverse().map
    hops = []
    for indptr, indices in table.hops:
        sizes = np.diff(indptr)[inv]
        new_ptr = np.zeros(table.n + 1, dtype=np.int64)
        np.cumsum(sizes, out=new_ptr[1:])
        new_idx = np.empty_like(indices)
        for new_i in range(table.n):
            old_i = inv[new_i]
            nbrs = p.map[indices[indptr[old_i]:indptr[old_i + 1]]]
            new_idx[new_ptr[new_i]:new_ptr[new_i + 1]] = np.sort(nbrs)
        hops.append((new_ptr, new_idx))
    return NeighborhoodTable(table.n, table.max_hop, tuple(hops))


# -- checkpoints -------------------------------------------------------------

CHECKPOINT_MAGIC = "localgnn-checkpoint 1"


def save_checkpoint(m, path):
    """Write the trainable parameters as text.

    Format: a magic line, then per tensor ``name ndim d0 d1 ...`` followed by
    one line of row-major values with 17 significant digits.
    """
    lines = [CHECKPOINT_MAGIC]
    for name, arr in m.parameters().items():
        lines.append(" ".join([name, str(arr.ndim)] + [str(d) for d in arr.shape]))
        lines.append(" ".join(f"{v:.17g}" for v in arr.ravel()))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_checkpoint(m, path):
    """Overwrite the parameters of ``m`` (in place) from :func:`save_checkpoint` output."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a localgnn checkpoint")
    params = m.parameters()
    seen = set()
    for lineno in range(1, len(lines), 2):
        head = lines[lineno].split()
        name, ndim = head[0], int(head[1])
        shape = tuple(int(d) for d in head[2:2 + ndim])
        if name not in params:
            raise ValueError(f"{path}:{lineno + 1}: unknown tensor {name!r}")
        if params[name].shape != shape:
            raise ValueError(f"{path}:{lineno + 1}: {name} has shape {shape}, model {params[name].shape}")
        values = np.array([float(v) for v in lines[lineno + 1].split()]) if math.prod(shape) else np.zeros(0)
        params[name][...] = values.reshape(shape)
        seen.add(name)
    missing = set(params) - seen
    if missing:
        raise ValueError(f"{path}: missing tensors {sorted(missing)}")
    return m
