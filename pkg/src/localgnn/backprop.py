"""Hand-written backward passes and a central-difference gradient checker.

For a single median/max layer followed by a linear readout this reproduces
the closed forms

    dJ/dh_k^{fg} = dJ/dy^f  sum_k' w_k'^f P_k' S^k x^g
    dJ/dw_k'^f   = dJ/dy^f  op(S^k', u^f)

where ``P_k'`` is the 0/1 matrix with a single 1 per row, at the node that
realized the hop-``k'`` median/max. ``P_k'^T v`` is a scatter-add through the
recorded realizers, so the selection matrices are never materialized.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .filters import SelectionRecord
from .graph_core import apply_shift_transpose
from .model import model_forward, softmax_cross_entropy, squared_error


class TieError(ValueError):
    """A median/max selection (or a ReLU input) sits too close to a kink."""


@dataclass(eq=False)
class LayerGradients:
    d_taps: np.ndarray
    d_act_weights: np.ndarray | None
    d_x: np.ndarray | None


@dataclass(eq=False)
class Gradients:
    layers: list[LayerGradients]
    d_readout_weight: np.ndarray
    d_readout_bias: np.ndarray

    def as_dict(self):
        """Same keys and order as :meth:`GnnModel.parameters`."""
        out = {}
        for i, g in enumerate(self.layers):
            out[f"layer{i}.taps"] = g.d_taps
            if g.d_act_weights is not None:
                out[f"layer{i}.act"] = g.d_act_weights
        out["readout.weight"] = self.d_readout_weight
        out["readout.bias"] = self.d_readout_bias
        return out


def _scatter_add(index, values, n):
    """``out[..., index[..., i, f], f] += values[..., i, f]`` along the node axis."""
    lead = values.shape[:-2]
    f = values.shape[-1]
    batch = int(np.prod(lead, dtype=np.int64))
    base = (np.arange(batch, dtype=np.int64) * n * f).reshape(lead + (1, 1))
    flat = base + np.asarray(index, dtype=np.int64) * f + np.arange(f, dtype=np.int64)
    out = np.bincount(flat.ravel(), weights=values.ravel(), minlength=batch * n * f)
    return out.reshape(lead + (n, f))


def activation_backward(kind, w, selection, table, u, d_out):
    """Gradients of an activation with respect to its weights and input.

    ``selection`` is the :class:`SelectionRecord` (median/max) or the
    boolean mask (ReLU) recorded by the forward call on ``u``. Returns
    ``(d_w, d_u)``; ``d_w`` is ``None`` for ReLU. Leading batch axes are
    summed into ``d_w``.
    """
    u = np.asarray(u, dtype=float)
    d_out = np.asarray(d_out, dtype=float)
    if d_out.shape != u.shape:
        raise ValueError(f"upstream gradient {d_out.shape} does not match input {u.shape}")
    if kind == "relu":
        mask = np.asarray(selection)
        if mask.shape != u.shape:
            raise ValueError("stale ReLU mask")
        return None, np.where(mask, d_out, 0.0)
    if not isinstance(selection, SelectionRecord) or selection.kind != kind:
        raise ValueError(f"need a {kind} SelectionRecord")
    weights = w.weights if hasattr(w, "weights") else np.asarray(w, dtype=float)
    shared = weights.ndim == 1
    n_hops = weights.shape[-1]
    if selection.max_hop + 1 != n_hops or (table is not None and table.max_hop + 1 != n_hops):
        raise ValueError("selection record, table and weights disagree on the hop count")
    if any(r.shape != u.shape for r in selection.realizers):
        raise ValueError("stale selection record (shape mismatch)")
    n = u.shape[-2]
    f = u.shape[-1]
    wf = np.broadcast_to(weights, (f, n_hops)) if shared else weights
    axes = tuple(range(u.ndim - 1))
    per_feature = np.stack([np.sum(d_out * v, axis=axes) for v in selection.values], axis=-1)
    d_w = per_feature.sum(axis=0) if shared else per_feature
    d_u = wf[:, 0] * d_out
    for k in range(1, n_hops):
        d_u = d_u + _scatter_add(selection.realizers[k], wf[:, k] * d_out, n)
    return d_w, d_u


def conv_backward(s, taps, x_in, d_u, shifts=None, need_input_grad=True):
    """Gradients of a filter bank with respect to its taps and its input.

    ``d_taps[f, g, k] = <d_u^f, S^k x^g>`` (summed over leading batch axes)
    and ``d_x^g = sum_f sum_k h_k^{fg} (S^T)^k d_u^f``. ``shifts`` are the
    stacked ``S^k x`` from the forward pass; recomputed when missing.
    """
    h = taps.taps if hasattr(taps, "taps") else np.asarray(taps, dtype=float)
    k_taps = h.shape[2]
    x_in = np.asarray(x_in, dtype=float)
    d_u = np.asarray(d_u, dtype=float)
    if d_u.shape[:-1] != x_in.shape[:-1] or d_u.shape[-1] != h.shape[0] or x_in.shape[-1] != h.shape[1]:
        raise ValueError(f"shapes x {x_in.shape}, d_u {d_u.shape}, taps {h.shape} disagree")
    if shifts is None:
        from .filters import shift_stack

        shifts = shift_stack(s, x_in, k_taps)
    d_taps = np.einsum("...nf,k...ng->fgk", d_u, shifts, optimize=True)
    if not need_input_grad:
        return d_taps, None
    # Horner in S^T: y = V_{K-1}; y = S^T y + V_k for k = K-2..0
    y = d_u @ h[:, :, k_taps - 1]
    for k in range(k_taps - 2, -1, -1):
        y = apply_shift_transpose(s, y) + d_u @ h[:, :, k]
    return d_taps, y


def readout_backward(kind, weight, features, d_logits):
    """Returns ``(d_weight, d_bias, d_features)``."""
    if kind == "graph":
        flat = features.reshape(features.shape[:-2] + (-1,))
        d_w = flat.reshape(-1, flat.shape[-1]).T @ d_logits.reshape(-1, d_logits.shape[-1])
        d_feat = (d_logits @ weight.T).reshape(features.shape)
    elif kind == "node":
        d_w = features.reshape(-1, features.shape[-1]).T @ d_logits.reshape(-1, d_logits.shape[-1])
        d_feat = d_logits @ weight.T
    else:
        raise ValueError(f"unknown readout kind {kind!r}")
    d_b = d_logits.reshape(-1, d_logits.shape[-1]).sum(axis=0)
    return d_w, d_b, d_feat


def model_backward(m, tape, d_logits, need_input_grad=False):
    """Backpropagate ``dJ/dlogits`` through the tape of :func:`model_forward`."""
    if len(tape.layers) != len(m.layers):
        raise ValueError("tape was recorded for a different model")
    d_logits = np.asarray(d_logits, dtype=float)
    if not tape.batched:
        d_logits = d_logits[None]
    if d_logits.shape != tape.logits.shape:
        raise ValueError(f"logit gradient {d_logits.shape} does not match tape {tape.logits.shape}")
    r = m.readout
    d_rw, d_rb, d_h = readout_backward(r.kind, r.weight, tape.readout_in, d_logits)
    if tape.dropout_mask is not None:
        d_h = d_h * tape.dropout_mask
    grads = [None] * len(m.layers)
    for i in range(len(m.layers) - 1, -1, -1):
        layer, lt = m.layers[i], tape.layers[i]
        if layer.activation == "relu":
            d_w, d_u = activation_backward("relu", None, lt.mask, None, lt.u, d_h)
        else:
            d_w, d_u = activation_backward(
                layer.activation, layer.act_weights, lt.selection, layer.table, lt.u, d_h
            )
        want_dx = i > 0 or need_input_grad
        d_taps, d_x = conv_backward(layer.shift, layer.taps, lt.x_in, d_u, lt.shifts, want_dx)
        if d_x is not None and not tape.batched:
            d_x_out = d_x[0]
        else:
            d_x_out = d_x
        grads[i] = LayerGradients(d_taps, d_w, d_x_out)
        d_h = d_x
    return Gradients(grads, d_rw, d_rb)


# -- finite differences ------------------------------------------------------


def _selection_gaps(kind, table, u):
    """Distance from every selected value to the nearest competing value."""
    gaps = [np.inf]
    rows = u.reshape(-1, u.shape[-2], u.shape[-1])
    for k in range(1, table.max_hop + 1):
        indptr, indices = table.hops[k]
        for i in range(table.n):
            vals = rows[:, indices[indptr[i]:indptr[i + 1]], :]
            if vals.shape[1] < 2:
                continue
            srt = np.sort(vals, axis=1)
            m = srt.shape[1]
            if kind == "max":
                gaps.append(float(np.min(srt[:, -1] - srt[:, -2])))
            else:
                mid = m // 2
                gaps.append(float(np.min(srt[:, mid] - srt[:, mid - 1])))
                if mid + 1 < m:
                    gaps.append(float(np.min(srt[:, mid + 1] - srt[:, mid])))
    return min(gaps)


def tape_kink_distance(m, tape):
    """Smallest distance of any activation input to a point of non-differentiability."""
    dist = np.inf
    for layer, lt in zip(m.layers, tape.layers):
        if layer.activation == "relu":
            dist = min(dist, float(np.min(np.abs(lt.u))))
        else:
            dist = min(dist, _selection_gaps(layer.activation, layer.table, lt.u))
    return dist


def sample_loss(m, x, y, loss="cross_entropy", reduction="mean"):
    logits, tape = model_forward(m, x)
    if loss == "cross_entropy":
        value, grad = softmax_cross_entropy(logits, y, reduction)
    elif loss == "squared":
        value, grad = squared_error(logits, y, reduction)
    else:
        raise ValueError(f"unknown loss {loss!r}")
    return value, grad, tape


def _reference_loss(m, x, y, loss):
    """Loss of ``m`` recomputed in extended precision with dense, sort-based operators.

    Independent of the sparse products and selection kernels used by
    :func:`model_forward`, and its rounding error sits far below what central
    differences of small gradient entries can tolerate in float64.
    """
    ext = np.longdouble
    h = np.asarray(x, dtype=ext)
    if h.ndim == 1:
        h = h[:, None]
    for layer in m.layers:
        s = layer.shift.toarray().astype(ext)
        taps = layer.taps.taps.astype(ext)
        shifted = h
        u = 0
        for k in range(taps.shape[2]):
            if k:
                shifted = s @ shifted
            u = u + shifted @ taps[:, :, k].T
        if layer.activation == "relu":
            h = np.maximum(u, 0)
            continue
        w = layer.act_weights.per_hop(u.shape[-1]).astype(ext)
        h = w[:, 0] * u
        for k in range(1, w.shape[1]):
            picked = np.empty_like(u)
            for i in range(layer.table.n):
                vals = np.sort(u[..., layer.table.hood(i, k), :], axis=-2)
                row = vals.shape[-2] // 2 if layer.activation == "median" else -1
                picked[..., i, :] = vals[..., row, :]
            h = h + w[:, k] * picked
    r = m.readout
    if r.kind == "graph":
        h = h.reshape(h.shape[:-2] + (-1,))
    logits = h @ r.weight.astype(ext) + r.bias.astype(ext)
    if loss == "squared":
        diff = logits - np.asarray(y, dtype=ext)
        n = diff.shape[0] if diff.ndim > 1 else 1
        return ext(0.5) * np.sum(diff * diff) / n
    y = np.asarray(y)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1))
    picked = np.take_along_axis(shifted, y[..., None], axis=-1)[..., 0]
    return np.mean(lse - picked)


def finite_difference_check(m, sample, step=1e-6, loss="cross_entropy", return_details=False):
    """Worst relative error between analytic and central-difference gradients.

    ``sample`` is ``(x, y)``. The relative error of each entry uses the
    denominator ``max(|analytic|, |numeric|, 1e-12)``. Raises
    :class:`TieError` when an activation input lies within ``10 * step`` of a
    kink, where the central difference is meaningless; resample and retry.

    The perturbed losses come from a dense extended-precision reference
    forward pass, so the check is meant for small models.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    x, y = sample
    _, d_logits, tape = sample_loss(m, x, y, loss)
    gap = tape_kink_distance(m, tape)
    if gap < 10 * step:
        raise TieError(f"activation input within {gap:.3g} of a kink (step {step:g})")
    analytic = model_backward(m, tape, d_logits).as_dict()
    worst = 0.0
    details = {}
    for name, arr in m.parameters().items():
        num = np.empty_like(arr)
        flat = arr.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + step
            jp = _reference_loss(m, x, y, loss)
            flat[idx] = orig - step
            jm = _reference_loss(m, x, y, loss)
            flat[idx] = orig
            num.reshape(-1)[idx] = float((jp - jm) / (2 * step))
        ana = analytic[name]
        denom = np.maximum(np.maximum(np.abs(ana), np.abs(num)), 1e-12)
        err = float(np.max(np.abs(ana - num) / denom))
        details[name] = err
        worst = max(worst, err)
    return (worst, details) if return_details else worst
