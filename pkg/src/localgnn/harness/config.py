"""Experiment configuration and its ``key = value`` file format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from ..filters import LOCAL_KINDS
from ..optim import TrainConfig

FAMILIES = ("er", "geometric", "file")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    """Everything needed to rerun one experiment sweep.

    ``activations`` lists the architectures to compare; each local kind is
    trained once per entry of ``hops``, ReLU once.
    """

    graph_family: str = "er"
    n: int = 100
    p: float = 0.4
    radius: float = 0.15
    graph_file: str = ""
    signals_file: str = ""
    activations: tuple = ("relu", "median", "max")
    hops: tuple = (1,)
    taps: int = 5
    features: tuple = (32,)
    num_classes: int = 10
    n_train: int = 10_000
    n_val: int = 200
    n_test: int = 200
    # on dense graphs W^t e_c stops depending on c well before t = 25
    t_max: int = 10
    epochs: int = 20
    batch_size: int = 100
    learning_rate: float = 0.005
    dropout_prob: float = 0.5
    loss_reduction: str = "mean"
    trials: int = 1
    seed: int = 0

    def __post_init__(self):
        self.activations = tuple(self.activations)
        self.hops = tuple(int(h) for h in self.hops)
        self.features = tuple(int(f) for f in self.features)
        if self.graph_family not in FAMILIES:
            raise ConfigError(f"graph_family must be one of {FAMILIES}, got {self.graph_family!r}")
        if self.graph_family == "file" and not self.graph_file:
            raise ConfigError("graph_family = file needs graph_file")
        for a in self.activations:
            if a not in ("relu",) + LOCAL_KINDS:
                raise ConfigError(f"unknown activation {a!r}")
        if not self.activations:
            raise ConfigError("no activations configured")
        if any(h < 0 for h in self.hops):
            raise ConfigError("hops must be non-negative")
        if self.n < 2 or self.taps < 1 or not self.features or min(self.features) < 1:
            raise ConfigError("n >= 2, taps >= 1 and positive feature counts required")
        if not 0 < self.p < 1:
            raise ConfigError("p must lie in (0, 1)")
        if self.trials < 1 or self.num_classes < 1:
            raise ConfigError("trials and num_classes must be positive")
        if min(self.n_train, self.n_val, self.n_test) < 0 or self.n_train == 0:
            raise ConfigError("sample counts must be non-negative with n_train > 0")
        self.train_config()

    def train_config(self, seed=None):
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            dropout_prob=self.dropout_prob,
            seed=self.seed if seed is None else seed,
            loss_reduction=self.loss_reduction,
        )

    def architectures(self):
        """``(label, activation, hops)`` for every model of a trial."""
        archs = []
        for a in self.activations:
            if a == "relu":
                archs.append(("relu", "relu", 0))
            else:
                archs.extend((f"{a}-{h}", a, h) for h in self.hops)
        return archs

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


def _convert(field, text):
    default = field.default
    if isinstance(default, tuple):
        items = [t.strip() for t in text.split(",") if t.strip()]
        return tuple(int(t) for t in items) if field.name in ("hops", "features") else tuple(items)
    if isinstance(default, bool):
        return text.lower() in ("1", "true", "yes")
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    return text


def parse_config(text, source="<config>"):
    fields = {f.name: f for f in dataclasses.fields(ExperimentConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in fields:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        try:
            values[key] = _convert(fields[key], value)
        except ValueError:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {value!r}") from None
    return ExperimentConfig(**values)


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), str(path))


def dump_config(cfg):
    lines = []
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ", ".join(str(x) for x in v)
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"
