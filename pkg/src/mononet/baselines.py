"""Interpretable comparators: additive risk scores and a greedy CART tree."""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .dataio import Dataset
from .errors import ContractError, DimensionError, ParseError


# ---------------------------------------------------------------------------
# Risk scores
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScoreTable:
    entries: dict[str, int]
    offset: float = 0.0
    name: str = ""

    def __post_init__(self):
        if any(not isinstance(v, (int, np.integer)) for v in self.entries.values()):
            raise ContractError("score table points must be integers")
        if "offset" in self.entries:
            raise ContractError("'offset' is reserved and cannot be a feature name")

    def with_offset(self, offset: float) -> "ScoreTable":
        return ScoreTable(dict(self.entries), float(offset), self.name)


def _logistic(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    e = np.exp(z[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def total_score(table: ScoreTable, sample: Mapping[str, float]) -> int:
    return sum(p for f, p in table.entries.items() if sample.get(f, 0))


def risk_predict(table: ScoreTable, sample: Mapping[str, float]) -> float:
    """P(y=1) = 1 / (1 + exp(-(offset + S))), S the points of the active features.

    Features missing from ``sample`` count as inactive; features missing from
    the table are ignored.
    """
    return float(_logistic(table.offset + total_score(table, sample)))


def normalize_name(name: str) -> str:
    """Canonical form for matching display names such as ``Age<=21`` to column names."""
    s = name.lower().replace("≤", "<=").replace("≥", ">=")
    s = s.replace("<=", "leq").replace(">=", "geq").replace("<", "lt").replace(">", "gt")
    return re.sub(r"[^a-z0-9]", "", s)


def column_points(table: ScoreTable, feature_names: Sequence[str]) -> tuple[np.ndarray, list[str]]:
    """Points per dataset column, matched by normalized name; also returns unmatched table entries."""
    index = {normalize_name(n): k for k, n in enumerate(feature_names)}
    points = np.zeros(len(feature_names))
    missing = []
    for f, p in table.entries.items():
        k = index.get(normalize_name(f))
        if k is None:
            missing.append(f)
        else:
            points[k] = p
    return points, missing


def risk_scores(table: ScoreTable, data: Dataset) -> np.ndarray:
    points, _ = column_points(table, data.feature_names)
    active = (data.flat_features != 0).astype(np.float64)
    return active @ points


def risk_predict_batch(table: ScoreTable, data: Dataset) -> np.ndarray:
    return _logistic(table.offset + risk_scores(table, data))


def risk_accuracy(table: ScoreTable, data: Dataset) -> float:
    pred = (risk_predict_batch(table, data) > 0.5).astype(np.int64)
    return float(np.mean(pred == data.labels))


def fit_offset(table: ScoreTable, data: Dataset, iters: int = 100) -> float:
    """Maximum-likelihood offset for fixed points (Newton's method in one variable)."""
    s = risk_scores(table, data)
    y = data.labels.astype(np.float64)
    if np.all(y == y[0]):
        raise ContractError("offset is unbounded for single-class data")
    b = 0.0
    for _ in range(iters):
        p = _logistic(b + s)
        g = np.sum(y - p)
        h = np.sum(p * (1 - p))
        if h <= 0:
            break
        step = g / h
        b += float(np.clip(step, -10.0, 10.0))
        if abs(step) < 1e-12:
            break
    return b


def read_score_table(path, name: str | None = None) -> ScoreTable:
    """Parse ``feature,points`` lines plus one optional ``offset,<value>`` line."""
    entries: dict[str, int] = {}
    offset = 0.0
    text = Path(path).read_text(encoding="utf-8")
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 2:
            raise ParseError("expected 'feature,points'", lineno)
        key, value = parts
        if key.lower() == "offset":
            try:
                offset = float(value)
            except ValueError:
                raise ParseError(f"bad offset {value!r}", lineno) from None
            continue
        try:
            pts = int(value)
        except ValueError:
            raise ParseError(f"points must be an integer, got {value!r}", lineno) from None
        if key in entries:
            raise ParseError(f"duplicate feature {key!r}", lineno)
        entries[key] = pts
    return ScoreTable(entries, offset, name or Path(path).stem)


def write_score_table(table: ScoreTable, path) -> None:
    lines = [f"{f},{p}" for f, p in table.entries.items()]
    lines.append(f"offset,{table.offset!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def bundled_score_table(name: str) -> ScoreTable:
    """Shipped tables: ``income`` and ``mushroom``."""
    ref = resources.files("mononet") / "data" / "score_tables" / f"{name}.csv"
    with resources.as_file(ref) as p:
        if not p.exists():
            raise ContractError(f"no bundled score table named {name!r}")
        return read_score_table(p, name)


# ---------------------------------------------------------------------------
# CART
# ---------------------------------------------------------------------------

@dataclass
class TreeNode:
    counts: np.ndarray
    depth: int
    feature: int = -1
    threshold: float = 0.0
    left: int = -1
    right: int = -1
    gain: float = 0.0

    @property
    def is_leaf(self) -> bool:
        return self.feature < 0

    @property
    def prediction(self) -> int:
        return int(np.argmax(self.counts))   # ties -> lowest class


@dataclass
class DecisionTree:
    nodes: list[TreeNode]
    n_features: int
    n_classes: int
    params: dict = field(default_factory=dict)

    @property
    def depth(self) -> int:
        return max(n.depth for n in self.nodes)

    def leaves(self) -> list[int]:
        return [i for i, n in enumerate(self.nodes) if n.is_leaf]


def gini(counts: np.ndarray) -> float:
    n = counts.sum()
    if n == 0:
        return 0.0
    p = counts / n
    return float(1.0 - np.dot(p, p))


def _split_scan(x: np.ndarray, onehot: np.ndarray, min_leaf: int):
    """Best split of one feature: (weighted child impurity, threshold) or None."""
    n = len(x)
    if n < 2:
        return None
    order = np.argsort(x, kind="stable")
    xs = x[order]
    left = np.cumsum(onehot[order], axis=0)[:-1]        # counts with first k+1 samples on the left
    total = left[-1] + onehot[order[-1]]
    right = total - left
    nl = np.arange(1, n, dtype=np.float64)
    nr = n - nl
    valid = (xs[1:] > xs[:-1]) & (nl >= min_leaf) & (nr >= min_leaf)
    if not np.any(valid):
        return None
    gl = 1.0 - np.sum((left / nl[:, None]) ** 2, axis=1)
    gr = 1.0 - np.sum((right / nr[:, None]) ** 2, axis=1)
    weighted = (nl * gl + nr * gr) / n
    weighted[~valid] = np.inf
    k = int(np.argmin(weighted))                      # first minimum -> lowest threshold
    return float(weighted[k]), 0.5 * (xs[k] + xs[k + 1])


def best_split(x: np.ndarray, y: np.ndarray, n_classes: int, min_leaf: int):
    """Scan every feature; returns (gain, feature, threshold) or None."""
    onehot = np.eye(n_classes)[y]
    parent = gini(onehot.sum(axis=0))
    best = None
    for f in range(x.shape[1]):
        res = _split_scan(x[:, f], onehot, min_leaf)
        if res is None:
            continue
        gain = parent - res[0]
        if best is None or gain > best[0] + 1e-15:
            best = (gain, f, res[1])
    return best


def cart_fit(train: Dataset, max_depth: int = 6, min_leaf: int = 5) -> DecisionTree:
    """Greedy Gini CART without pruning.

    Splits ``x <= t`` vs ``x > t`` at midpoints between distinct values.  A
    node becomes a leaf when it is pure, at ``max_depth``, when no split leaves
    ``min_leaf`` samples on each side, or when no split reduces impurity.
    Ties between splits go to the lowest feature index, then the lowest
    threshold.
    """
    if len(train) == 0:
        raise ContractError("cannot fit a tree on an empty dataset")
    if max_depth < 0 or min_leaf < 1:
        raise ContractError("max_depth must be >= 0 and min_leaf >= 1")
    x = train.flat_features
    y = train.labels
    n_classes = max(2, train.n_classes)
    nodes: list[TreeNode] = []

    def grow(idx: np.ndarray, depth: int) -> int:
        counts = np.bincount(y[idx], minlength=n_classes).astype(np.float64)
        node_id = len(nodes)
        nodes.append(TreeNode(counts, depth))
        if depth >= max_depth or np.count_nonzero(counts) <= 1 or len(idx) < 2 * min_leaf:
            return node_id
        split = best_split(x[idx], y[idx], n_classes, min_leaf)
        if split is None or split[0] <= 1e-12:
            return node_id
        gain, f, t = split
        mask = x[idx, f] <= t
        node = nodes[node_id]
        node.feature, node.threshold, node.gain = f, t, gain
        node.left = grow(idx[mask], depth + 1)
        node.right = grow(idx[~mask], depth + 1)
        return node_id

    grow(np.arange(len(y)), 0)
    return DecisionTree(nodes, x.shape[1], n_classes, {"max_depth": max_depth, "min_leaf": min_leaf})


def cart_predict(tree: DecisionTree, sample) -> int:
    sample = np.asarray(sample, dtype=np.float64).reshape(-1)
    if sample.shape[0] != tree.n_features:
        raise DimensionError(f"tree expects {tree.n_features} features, got {sample.shape[0]}")
    node = tree.nodes[0]
    while not node.is_leaf:
        node = tree.nodes[node.left if sample[node.feature] <= node.threshold else node.right]
    return node.prediction


def cart_predict_batch(tree: DecisionTree, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    x = x.reshape(len(x), -1)
    if x.shape[1] != tree.n_features:
        raise DimensionError(f"tree expects {tree.n_features} features, got {x.shape[1]}")
    out = np.empty(len(x), dtype=np.int64)
    pos = np.zeros(len(x), dtype=np.int64)
    active = np.arange(len(x))
    while len(active):
        nodes = [tree.nodes[p] for p in pos[active]]
        leaf = np.array([n.is_leaf for n in nodes])
        for r, n in zip(active[leaf], (n for n, l in zip(nodes, leaf) if l)):
            out[r] = n.prediction
        active = active[~leaf]
        inner = [n for n, l in zip(nodes, leaf) if not l]
        if not inner:
            break
        feats = np.array([n.feature for n in inner])
        thr = np.array([n.threshold for n in inner])
        go_left = x[active, feats] <= thr
        pos[active] = np.where(go_left, [n.left for n in inner], [n.right for n in inner])
    return out


def cart_accuracy(tree: DecisionTree, data: Dataset) -> float:
    return float(np.mean(cart_predict_batch(tree, data.flat_features) == data.labels))
