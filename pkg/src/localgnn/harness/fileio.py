"""Plain-text file formats: edge lists, signal CSVs and metric records.

Edge list::

    # comment
    undirected [n]
    0 1 1.0
    1 2 0.5

The header (``directed`` or ``undirected``, optionally followed by the node
count) may be omitted, in which case the graph is undirected and ``n`` is
one more than the largest index. Undirected files list each edge once.

Signal CSV: one sample per row, integer label first, then the ``N * F``
feature values node-major.

Metric files hold one flat JSON object per line with every real number
written with 17 significant digits.
"""

from __future__ import annotations

import csv
import json
import math

import numpy as np

from ..graph_core import Graph


class FormatError(ValueError):
    pass


def _fmt(v):
    return format(float(v), ".17g")


def write_edge_list(g, path):
    lines = [f"{'directed' if g.directed else 'undirected'} {g.n}"]
    for s, d, w in g.edges:
        if g.directed or s < d:
            lines.append(f"{s} {d} {_fmt(w)}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_edge_list(path, n=None):
    directed = False
    edges = {}
    header_n = None
    seen_content = False
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if not seen_content and parts[0] in ("directed", "undirected"):
                directed = parts[0] == "directed"
                if len(parts) > 2:
                    raise FormatError(f"{path}:{lineno}: malformed header {line!r}")
                if len(parts) == 2:
                    try:
                        header_n = int(parts[1])
                    except ValueError:
                        raise FormatError(f"{path}:{lineno}: bad node count {parts[1]!r}") from None
                seen_content = True
                continue
            seen_content = True
            if len(parts) not in (2, 3):
                raise FormatError(f"{path}:{lineno}: expected 'src dst weight', got {line!r}")
            try:
                s, d = int(parts[0]), int(parts[1])
                w = float(parts[2]) if len(parts) == 3 else 1.0
            except ValueError:
                raise FormatError(f"{path}:{lineno}: cannot parse {line!r}") from None
            if s < 0 or d < 0:
                raise FormatError(f"{path}:{lineno}: negative node index")
            key = (s, d) if directed else (min(s, d), max(s, d))
            if key in edges:
                raise FormatError(f"{path}:{lineno}: duplicate edge {s} {d}")
            edges[key] = (s, d, w, lineno)
    n_nodes = n if n is not None else header_n
    biggest = max((max(s, d) for s, d, _, _ in edges.values()), default=-1)
    if n_nodes is None:
        n_nodes = biggest + 1
    for s, d, _, lineno in edges.values():
        if max(s, d) >= n_nodes:
            raise FormatError(f"{path}:{lineno}: node index out of range for n={n_nodes}")
    if directed:
        return Graph(n_nodes, tuple((s, d, w) for s, d, w, _ in edges.values()), True)
    return Graph.undirected(n_nodes, [(s, d, w) for s, d, w, _ in edges.values()])


def write_signals(samples, path):
    """``samples`` is an iterable of ``(signal (N, F), label)``."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        for x, label in samples:
            writer.writerow([int(label)] + [_fmt(v) for v in np.asarray(x).ravel()])


def load_signals(path, n_features=1):
    """Read a signal CSV as a list of ``(signal (N, F), label)``."""
    out = []
    width = None
    with open(path, encoding="utf-8", newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            try:
                label = int(row[0])
                values = np.array([float(v) for v in row[1:]])
            except ValueError:
                raise FormatError(f"{path}:{lineno}: cannot parse row") from None
            if width is None:
                width = values.size
            if values.size != width or width == 0 or width % n_features:
                raise FormatError(f"{path}:{lineno}: expected {width} values, got {values.size}")
            out.append((values.reshape(-1, n_features), label))
    return out


def format_record(record):
    """One JSON object with 17-significant-digit reals."""
    parts = []
    for key, value in record.items():
        if isinstance(value, (bool, np.bool_)):
            text = "true" if value else "false"
        elif isinstance(value, (int, np.integer)):
            text = str(int(value))
        elif isinstance(value, (float, np.floating)):
            if not math.isfinite(value):
                raise ValueError(f"cannot write non-finite metric {key}={value}")
            text = _fmt(value)
        else:
            text = json.dumps(value)
        parts.append(f"{json.dumps(key)}: {text}")
    return "{" + ", ".join(parts) + "}"


def write_records(records, path):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(format_record(rec) + "\n")


def read_records(path):
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
