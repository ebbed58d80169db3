"""Benchmark protocol for the risk-score datasets and the MNIST study.

Datasets are not shipped.  ``find_dataset`` looks in ``$MONONET_DATA`` (or
``./data``) for the risk-slim example files or for a file named after the
task, e.g. ``income.csv``.
"""
from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import baselines
from .dataio import Dataset, load_csv, load_idx, split
from .model import Model, build_mononet, mononet_spec
from .training import TrainConfig, evaluate_accuracy, train

log = logging.getLogger(__name__)

RISK_DATASETS = ("income", "mammo", "mushroom", "breast", "bank")

CANDIDATE_FILES = {
    "income": ("income.csv", "adult_data.csv", "adult.csv"),
    "mammo": ("mammo.csv", "mammo_data.csv"),
    "mushroom": ("mushroom.csv", "mushroom_data.csv"),
    "breast": ("breast.csv", "breastcancer_data.csv", "breast_data.csv"),
    "bank": ("bank.csv", "bank_data.csv"),
}

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}

# Test accuracies (%) reported for the three model families.
REPORTED = {
    "MonoNet": {"income": (84.29, 0.16), "mammo": (71.65, 7.67), "mushroom": (96.01, 0.65),
                "breast": (95.79, 2.19), "bank": (63.05, 1.41)},
    "Decision Tree": {"income": 82.16, "mammo": 76.29, "mushroom": 96.92, "breast": 94.20, "bank": 57.49},
    "risk-slim": {"income": 75.31, "mammo": 53.61, "mushroom": 100.00, "breast": 84.06, "bank": 61.30},
}

BENCH_SPEC = ([64, 64], 3, [64])
SEEDS = tuple(range(10))
TEST_FRACTION = 0.2
SPLIT_SEED = 0


class DatasetMissing(FileNotFoundError):
    pass


def data_dir() -> Path:
    return Path(os.environ.get("MONONET_DATA", "data"))


def find_dataset(name: str, directory: Path | None = None) -> Path:
    d = Path(directory) if directory is not None else data_dir()
    for fname in CANDIDATE_FILES.get(name, (f"{name}.csv",)):
        for cand in (d / fname, d / "risk_slim" / fname):
            if cand.exists():
                return cand
    raise DatasetMissing(f"dataset {name!r} not found in {d} (tried {', '.join(CANDIDATE_FILES.get(name, ()))})")


def load_benchmark(name: str, directory: Path | None = None) -> Dataset:
    return load_csv(find_dataset(name, directory), name=name)


def find_mnist(directory: Path | None = None) -> dict[str, tuple[Path, Path]]:
    d = Path(directory) if directory is not None else data_dir()
    out = {}
    for part, files in MNIST_FILES.items():
        found = None
        for sub in (d, d / "mnist"):
            for suffix in ("", ".gz"):
                cand = tuple(sub / (f + suffix) for f in files)
                if all(c.exists() for c in cand):
                    found = cand
                    break
            if found:
                break
        if found is None:
            raise DatasetMissing(f"MNIST {part} IDX files not found in {d}")
        out[part] = found
    return out


def load_mnist(directory: Path | None = None) -> tuple[Dataset, Dataset]:
    files = find_mnist(directory)
    return load_idx(*files["train"], name="mnist-train"), load_idx(*files["test"], name="mnist-test")


def bench_config(n_train: int, seed: int) -> TrainConfig:
    """Desk-scale schedule: batch 64, about 1.5M sample visits, 20..200 epochs."""
    epochs = int(np.clip(round(1.5e6 / max(n_train, 1)), 20, 200))
    return TrainConfig(epochs=epochs, batch_size=64, learning_rate=1e-3, seed=seed)


@dataclass
class RunSummary:
    accuracies: list[float]
    seconds: float
    models: list[Model] = field(default_factory=list, repr=False)

    @property
    def mean(self) -> float:
        return float(np.mean(self.accuracies))

    @property
    def std(self) -> float:
        return float(np.std(self.accuracies, ddof=1)) if len(self.accuracies) > 1 else 0.0

    def cell(self) -> str:
        return f"{100 * self.mean:.2f} ± {100 * self.std:.2f}" if len(self.accuracies) > 1 \
            else f"{100 * self.mean:.2f}"


def run_mononet(train_data: Dataset, test_data: Dataset, seeds: Sequence[int] = SEEDS,
                config: TrainConfig | None = None, keep_models: bool = False) -> RunSummary:
    start = time.perf_counter()
    accs, models = [], []
    free, k, mono = BENCH_SPEC
    for s in seeds:
        cfg = config if config is not None else bench_config(len(train_data), s)
        cfg = TrainConfig.from_mapping({"seed": s}, cfg)
        model = build_mononet(mononet_spec(free, k, mono), train_data.flat_features.shape[1], s)
        model, hist = train(model, train_data, cfg, test_data)
        accs.append(hist.test_accuracy)
        if keep_models:
            models.append(model)
        log.info("MonoNet seed %d: test accuracy %.4f", s, hist.test_accuracy)
    return RunSummary(accs, time.perf_counter() - start, models)


def run_cart(train_data: Dataset, test_data: Dataset, max_depth: int = 6, min_leaf: int = 5) -> RunSummary:
    start = time.perf_counter()
    tree = baselines.cart_fit(train_data, max_depth, min_leaf)
    return RunSummary([baselines.cart_accuracy(tree, test_data)], time.perf_counter() - start)


def run_risk(name: str, train_data: Dataset, test_data: Dataset) -> RunSummary | None:
    """Inference with the published points and an offset fitted on the training split."""
    try:
        table = baselines.bundled_score_table(name)
    except Exception:
        return None
    start = time.perf_counter()
    table = table.with_offset(baselines.fit_offset(table, train_data))
    return RunSummary([baselines.risk_accuracy(table, test_data)], time.perf_counter() - start)


def run_risk_suite(names: Sequence[str] = RISK_DATASETS, seeds: Sequence[int] = SEEDS,
                   directory: Path | None = None, keep_models: bool = False) -> dict:
    results: dict[str, dict] = {}
    for name in names:
        try:
            data = load_benchmark(name, directory)
        except DatasetMissing as exc:
            results[name] = {"missing": str(exc)}
            continue
        tr, te = split(data, TEST_FRACTION, SPLIT_SEED)
        results[name] = {
            "MonoNet": run_mononet(tr, te, seeds, keep_models=keep_models),
            "Decision Tree": run_cart(tr, te),
            "risk-slim": run_risk(name, tr, te),
        }
    return results


def format_table(results: dict) -> str:
    """Rows per model family, columns per dataset, with the reported numbers beneath."""
    names = list(results)
    rows = [["Model", *names]]
    for fam in ("risk-slim", "Decision Tree", "MonoNet"):
        row = [fam]
        for n in names:
            r = results[n]
            if "missing" in r:
                row.append("n/a")
            else:
                row.append(r[fam].cell() if r.get(fam) is not None else "-")
        rows.append(row)
    for fam in ("risk-slim", "Decision Tree", "MonoNet"):
        row = [f"{fam} (reported)"]
        for n in names:
            v = REPORTED[fam].get(n)
            row.append("-" if v is None else (f"{v[0]:.2f} ± {v[1]:.2f}" if isinstance(v, tuple) else f"{v:.2f}"))
        rows.append(row)
    widths = [max(len(r[c]) for r in rows) for c in range(len(rows[0]))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def results_to_json(results: dict) -> str:
    out = {}
    for n, r in results.items():
        if "missing" in r:
            out[n] = r
            continue
        out[n] = {fam: (None if s is None else {"accuracies": s.accuracies, "mean": s.mean, "std": s.std})
                  for fam, s in r.items()}
    return json.dumps(out, indent=2, sort_keys=True)


# Hierarchical MNIST schedule.  Full: 60k images; fast: the first 10k
# training images (test set unchanged).
MNIST_FILTERS = 16
MNIST_MONO1 = (16,)
MNIST_MONO2 = ()
MNIST_FAST_SAMPLES = 10_000


def mnist_config(fast: bool, seed: int = 0) -> TrainConfig:
    return TrainConfig(epochs=25 if fast else 15, batch_size=64, learning_rate=1e-2, seed=seed)


def run_mnist(train_data: Dataset, test_data: Dataset, fast: bool = False, seed: int = 0,
              config: TrainConfig | None = None, on_epoch=None) -> tuple[Model, float]:
    from .hierarchy import ConvSpec, build_hierarchical

    if fast and len(train_data) > MNIST_FAST_SAMPLES:
        train_data = train_data.subset(np.arange(MNIST_FAST_SAMPLES), name=f"{train_data.name}-fast")
    shape = tuple(train_data.features.shape[1:])
    model = build_hierarchical(ConvSpec(MNIST_FILTERS), MNIST_MONO1, MNIST_MONO2,
                               classes=max(train_data.n_classes, test_data.n_classes), image_shape=shape, seed=seed)
    cfg = config if config is not None else mnist_config(fast, seed)
    model, hist = train(model, train_data, cfg, test_data, on_epoch=on_epoch)
    return model, float(hist.test_accuracy)
