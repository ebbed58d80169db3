"""Explanations of interpretable units by ranking training samples.

For each unit of the interpretable layer the training samples are sorted by
the unit's activation; the feature means of the top and bottom fractions are
compared and the features with the largest gap describe what the unit
responds to.  The unit's direction toward each output comes from the sign
matrix, so "this unit raises P(y=1)" is a structural statement, not a fit.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .dataio import Dataset
from .errors import ContractError, UndefinedCorrelationError
from .model import Model, forward, monotone_signs, serialize


def average_ranks(x) -> np.ndarray:
    """1-based ranks; tied values share the mean of the ranks they span."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="stable")
    sorted_x = x[order]
    ranks = np.empty(len(x), dtype=np.float64)
    start = 0
    n = len(x)
    while start < n:
        end = start + 1
        while end < n and sorted_x[end] == sorted_x[start]:
            end += 1
        ranks[order[start:end]] = 0.5 * (start + end - 1) + 1.0
        start = end
    return ranks


def spearman(x, y) -> float:
    """Pearson correlation of the average ranks of ``x`` and ``y``."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if len(x) != len(y):
        raise ContractError(f"spearman needs equal lengths, got {len(x)} and {len(y)}")
    if len(x) < 2:
        raise ContractError("spearman needs at least two observations")
    rx = average_ranks(x)
    ry = average_ranks(y)
    rx -= rx.mean()
    ry -= ry.mean()
    sxx, syy = np.dot(rx, rx), np.dot(ry, ry)
    if sxx == 0 or syy == 0:
        raise UndefinedCorrelationError("a vector has zero rank variance")
    return float(np.clip(np.dot(rx, ry) / np.sqrt(sxx * syy), -1.0, 1.0))


def interpretable_activations(model: Model, data: Dataset, batch_size: int = 4096) -> np.ndarray:
    x = data.features
    return np.concatenate([np.asarray(forward(model, x[i:i + batch_size])[1])
                           for i in range(0, len(x), batch_size)])


def rank_samples(model: Model, data: Dataset, unit: int, activations: np.ndarray | None = None) -> np.ndarray:
    """Sample indices by descending activation of ``unit``; ties keep index order."""
    if not 0 <= unit < model.interpretable_width:
        raise ContractError(f"unit {unit} out of range for interpretable width {model.interpretable_width}")
    h = activations if activations is not None else interpretable_activations(model, data)
    return np.argsort(-h[:, unit], kind="stable")


def fraction_count(q: float, n: int) -> int:
    # round first so 0.1 * 30 counts as 3, not 4
    return math.ceil(round(q * n, 9))


@dataclass
class GapTable:
    feature_names: tuple[str, ...]
    top_mean: np.ndarray
    bottom_mean: np.ndarray
    gap: np.ndarray
    n_each: int

    def largest(self, k: int) -> list[int]:
        """Feature indices of the ``k`` largest gaps (ties: lower index first)."""
        order = np.lexsort((np.arange(len(self.gap)), -self.gap))
        return order[:k].tolist()


def top_bottom_gaps(ranking, data: Dataset, q: float) -> GapTable:
    """Feature means over the first and last ceil(q*N) ranked samples."""
    if not 0.0 < q <= 0.5:
        raise ContractError(f"q must lie in (0, 0.5], got {q}")
    ranking = np.asarray(ranking)
    n = fraction_count(q, len(ranking))
    if n == 0:
        raise ContractError("top/bottom sets would be empty")
    x = data.flat_features
    top = x[ranking[:n]].mean(axis=0)
    bottom = x[ranking[len(ranking) - n:]].mean(axis=0)
    return GapTable(data.feature_names, top, bottom, np.abs(top - bottom), n)


@dataclass
class FeatureGap:
    feature: str
    index: int
    top_mean: float
    bottom_mean: float
    gap: float

    @property
    def end(self) -> str:
        """Which end of the ranking the feature is more common in."""
        return "top" if self.top_mean >= self.bottom_mean else "bottom"


@dataclass
class UnitExplanation:
    unit: int
    signs: list[int]                      # toward each output
    q: float
    n_each: int
    features: list[FeatureGap]
    top_features: list[FeatureGap]
    empirical_correlation: float | None = None  # spearman(activation, label)

    def correlation(self, output: int = 0) -> str:
        return "positive" if self.signs[output] > 0 else "negative"

    def at_end(self, end: str) -> list[str]:
        return [f.feature for f in self.top_features if f.end == end]


@dataclass
class InterpretationReport:
    dataset: str
    model: str
    q: float
    top_k: int
    units: list[UnitExplanation] = field(default_factory=list)

    def to_dict(self) -> dict:
        out = {"dataset": self.dataset, "model": self.model, "q": self.q, "top_k": self.top_k, "units": []}
        for u in self.units:
            d = asdict(u)
            d["correlation_with_outcome"] = [("positive" if s > 0 else "negative") for s in u.signs]
            d["top"] = u.at_end("top")
            d["bottom"] = u.at_end("bottom")
            out["units"].append(d)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_table(self) -> str:
        """Aligned text: one row per unit with its top-end and bottom-end features."""
        rows = [("unit", "y=1", "top", "bottom")]
        for u in self.units:
            rows.append((str(u.unit), "+" if u.signs[0] > 0 else "-",
                         ", ".join(u.at_end("top")) or "-", ", ".join(u.at_end("bottom")) or "-"))
        widths = [max(len(r[c]) for r in rows) for c in range(4)]
        lines = ["  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip() for r in rows]
        lines.insert(1, "  ".join("-" * w for w in widths))
        return "\n".join(lines) + "\n"


def model_id(model: Model) -> str:
    return hashlib.sha256(serialize(model)).hexdigest()[:16]


def explain_unit(model: Model, data: Dataset, unit: int, q: float = 0.1, top_k: int = 4,
                 activations: np.ndarray | None = None) -> UnitExplanation:
    h = activations if activations is not None else interpretable_activations(model, data)
    ranking = rank_samples(model, data, unit, h)
    table = top_bottom_gaps(ranking, data, q)
    feats = [FeatureGap(name, k, float(table.top_mean[k]), float(table.bottom_mean[k]), float(table.gap[k]))
             for k, name in enumerate(table.feature_names)]
    try:
        emp = spearman(h[:, unit], data.labels) if data.n_classes == 2 else None
    except UndefinedCorrelationError:
        emp = None
    return UnitExplanation(unit, monotone_signs(model).entries[unit].astype(int).tolist(), q, table.n_each,
                           feats, [feats[k] for k in table.largest(top_k)], emp)


def build_report(model: Model, data: Dataset, q: float = 0.1, top_k: int = 4) -> InterpretationReport:
    if not 0.0 < q <= 0.5:
        raise ContractError(f"q must lie in (0, 0.5], got {q}")
    if top_k < 1:
        raise ContractError("top_k must be >= 1")
    h = interpretable_activations(model, data)
    units = [explain_unit(model, data, i, q, top_k, h) for i in range(model.interpretable_width)]
    return InterpretationReport(data.name, model_id(model), q, top_k, units)
