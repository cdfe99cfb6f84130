"""ADAM, node dropout, the mini-batch training loop and evaluation metrics."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .backprop import model_backward
from .model import model_forward, softmax_cross_entropy, squared_error

log = logging.getLogger(__name__)


@dataclass(eq=False)
class Split:
    """Inputs ``x`` of shape ``(M, N, F)`` and targets ``y`` (class indices or arrays)."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.y = np.asarray(self.y)
        if len(self.x) != len(self.y):
            raise ValueError(f"{len(self.x)} inputs but {len(self.y)} targets")

    def __len__(self):
        return len(self.y)


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 100
    learning_rate: float = 0.005
    dropout_prob: float = 0.5
    seed: int = 0
    loss_reduction: str = "mean"
    loss: str = "cross_entropy"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size <= 0:
            raise ValueError("epochs must be >= 0 and batch_size > 0")
        # lr = 0 is allowed: it freezes the parameters
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if not 0 <= self.dropout_prob < 1:
            raise ValueError("dropout_prob must lie in [0, 1)")
        if self.loss_reduction not in ("mean", "sum"):
            raise ValueError(f"unknown loss reduction {self.loss_reduction!r}")
        if self.loss not in ("cross_entropy", "squared"):
            raise ValueError(f"unknown loss {self.loss!r}")


@dataclass(eq=False)
class AdamState:
    lr: float = 0.005
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("ADAM decay factors must lie in [0, 1)")


def adam_step(state, grads, params):
    """One bias-corrected ADAM update of ``params`` (in place).

    ``grads`` and ``params`` are name -> array mappings with equal keys and
    shapes. Returns ``params``.
    """
    if set(grads) != set(params):
        raise ValueError(f"gradient keys {sorted(grads)} do not match parameters {sorted(params)}")
    for name, g in grads.items():
        if g.shape != params[name].shape:
            raise ValueError(f"{name}: gradient {g.shape} vs parameter {params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for {name}")
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for name, p in params.items():
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params


def node_dropout_mask(shape, p, rng):
    """Inverted node-dropout mask for signals of ``shape`` ``(..., N, F)``.

    The mask has a singleton feature axis: whole node rows are dropped.
    """
    if not 0 <= p < 1:
        raise ValueError(f"dropout probability must lie in [0, 1), got {p}")
    keep = rng.random(tuple(shape[:-1]) + (1,)) >= p
    return keep / (1.0 - p)


def node_dropout(x, p, rng):
    """Zero each node's feature row with probability ``p``; survivors scale by ``1/(1-p)``."""
    x = np.asarray(x, dtype=float)
    if p == 0:
        return x.copy()
    return x * node_dropout_mask(x.shape, p, rng)


def _loss(kind, logits, y, reduction):
    if kind == "cross_entropy":
        return softmax_cross_entropy(logits, y, reduction)
    return squared_error(logits, y, reduction)


def evaluate(m, split, task="classification", batch_size=200, reduction="mean"):
    """Loss plus accuracy (classification) or RMSE (regression) over a split.

    Predicted classes are ``argmax`` of the logits, ties going to the
    smallest class index. No dropout is applied.
    """
    if len(split) == 0:
        raise ValueError("cannot evaluate an empty split")
    total_loss = 0.0
    correct = 0
    sq = 0.0
    count = 0
    for start in range(0, len(split), batch_size):
        xb = split.x[start:start + batch_size]
        yb = split.y[start:start + batch_size]
        logits, _ = model_forward(m, xb)
        if task == "classification":
            loss, _ = softmax_cross_entropy(logits, yb, "sum")
            correct += int(np.sum(np.argmax(logits, axis=-1) == yb))
            count += yb.size
        elif task == "regression":
            diff = logits - yb
            loss = 0.5 * float(np.sum(diff * diff))
            sq += float(np.sum(diff * diff))
            count += diff.size
        else:
            raise ValueError(f"unknown task {task!r}")
        total_loss += loss
    n_samples = len(split)
    out = {"loss": total_loss / n_samples if reduction == "mean" else total_loss}
    if task == "classification":
        out["accuracy"] = correct / count
    else:
        out["rmse"] = float(np.sqrt(sq / count))
    return out


def train(m, dataset, cfg, on_epoch=None):
    """Mini-batch ADAM training of ``m`` (in place).

    ``dataset`` needs ``train`` and ``val`` :class:`Split` attributes. Each
    epoch shuffles the training split with a generator seeded from
    ``cfg.seed``, and every batch goes forward -> loss -> backward -> ADAM.
    Node dropout (inverted, rate ``cfg.dropout_prob``) acts on the features
    entering the readout during training only.

    Returns ``(m, history)`` where ``history[e]`` holds ``train_loss``,
    ``val_loss`` and ``val_acc`` (or ``val_rmse``) after epoch ``e + 1``.
    ``train_loss`` is the mean of the epoch's mini-batch losses.
    """
    train_split, val_split = dataset.train, dataset.val
    if len(train_split) == 0:
        raise ValueError("empty training split")
    task = "classification" if cfg.loss == "cross_entropy" else "regression"
    rng = np.random.default_rng(cfg.seed)
    state = AdamState(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
    params = m.parameters()
    history = []
    n = len(train_split)
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        batch_losses = []
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            xb, yb = train_split.x[idx], train_split.y[idx]
            mask = None
            if cfg.dropout_prob > 0:
                f_last = m.layers[-1].taps.f_out
                mask = node_dropout_mask((len(idx), m.n_nodes, f_last), cfg.dropout_prob, rng)
            logits, tape = model_forward(m, xb, dropout_mask=mask)
            loss, d_logits = _loss(cfg.loss, logits, yb, cfg.loss_reduction)
            if not np.isfinite(loss):
                raise FloatingPointError(
                    f"loss became {loss} at epoch {epoch}, batch {b} "
                    f"(max |logit| = {np.max(np.abs(logits)):.3g})"
                )
            grads = model_backward(m, tape, d_logits)
            adam_step(state, grads.as_dict(), params)
            batch_losses.append(loss)
        record = {"epoch": epoch, "train_loss": float(np.mean(batch_losses))}
        if val_split is not None and len(val_split):
            ev = evaluate(m, val_split, task)
            record["val_loss"] = ev["loss"]
            if task == "classification":
                record["val_acc"] = ev["accuracy"]
            else:
                record["val_rmse"] = ev["rmse"]
        log.debug("epoch %d: %s", epoch, record)
        history.append(record)
        if on_epoch is not None:
            on_epoch(record)
    return m, history
