"""Mini-batch training, losses and accuracy."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Callable, Mapping

import numpy as np

from . import tensor as T
from .dataio import Dataset
from .errors import ContractError, DataError, DivergedTrainingError, NonFiniteError
from .model import Model, SCALE_FLOOR, clamp_scale, effective_weight, forward, forward_tape, record_input_ranges

log = logging.getLogger(__name__)

# Keeps exp(V) strictly positive and finite in float64.
V_BOUND = 700.0


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 32
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    loss: str = "auto"              # auto | bce_with_logits | softmax_ce
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.epochs < 1:
            raise ContractError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ContractError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ContractError("learning_rate must be > 0")
        if self.optimizer not in ("sgd", "adam"):
            raise ContractError(f"unknown optimizer {self.optimizer!r}")
        if self.loss not in ("auto", "bce_with_logits", "softmax_ce"):
            raise ContractError(f"unknown loss {self.loss!r}")

    @classmethod
    def from_mapping(cls, values: Mapping[str, Any], base: "TrainConfig | None" = None) -> "TrainConfig":
        base = base or cls()
        types = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            key = key.replace("-", "_")
            if key not in types:
                raise ContractError(f"unknown config key {key!r}")
            current = getattr(base, key)
            kwargs[key] = type(current)(raw) if not isinstance(raw, type(current)) else raw
        return replace(base, **kwargs)

    @classmethod
    def from_file(cls, path, **overrides) -> "TrainConfig":
        """Read ``key = value`` lines (``#`` comments allowed); ``overrides`` win."""
        values: dict[str, str] = {}
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ContractError(f"{path}:{lineno}: expected key=value")
            k, v = line.split("=", 1)
            values[k.strip()] = v.strip()
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_mapping(values)


@dataclass
class TrainHistory:
    loss: list[float] = field(default_factory=list)
    accuracy: list[float] = field(default_factory=list)
    test_accuracy: float | None = None

    def as_dict(self) -> dict:
        return {"loss": self.loss, "accuracy": self.accuracy, "test_accuracy": self.test_accuracy}


def loss_kind_for(model: Model, kind: str = "auto") -> str:
    if kind != "auto":
        return kind
    return "bce_with_logits" if model.output_width == 1 else "softmax_ce"


def loss(logits, labels, kind: str):
    """Mean batch loss; ``labels`` are class indices."""
    y = np.asarray(labels)
    z_shape = logits.shape
    if kind == "bce_with_logits":
        if len(z_shape) == 2 and z_shape[1] != 1:
            raise ContractError(f"binary loss needs one logit per sample, got {z_shape}")
        if np.any((y != 0) & (y != 1)):
            raise DataError("binary labels must be 0 or 1")
        return T.bce_with_logits(logits, y.astype(np.float64))
    if kind == "softmax_ce":
        if len(z_shape) != 2:
            raise ContractError(f"multiclass loss needs N x C logits, got {z_shape}")
        if np.any(y < 0) or np.any(y >= z_shape[1]) or np.any(y != np.floor(y)):
            raise DataError(f"labels must be integers in [0, {z_shape[1]})")
        return T.softmax_ce(logits, y.astype(np.float64))
    raise ContractError(f"unknown loss kind {kind!r}")


class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for k, g in grads.items():
            m = self.m.get(k)
            if m is None:
                m = self.m[k] = np.zeros_like(g)
                self.v[k] = np.zeros_like(g)
            v = self.v[k]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            mhat = m / (1 - b1 ** self.t)
            vhat = v / (1 - b2 ** self.t)
            params[k] = params[k] - self.lr * mhat / (np.sqrt(vhat) + self.eps)


class SGD:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        for k, g in grads.items():
            params[k] = params[k] - self.lr * g


def make_optimizer(config: TrainConfig):
    if config.optimizer == "adam":
        return Adam(config.learning_rate, config.beta1, config.beta2, config.eps)
    return SGD(config.learning_rate)


def enforce_invariants(model: Model) -> None:
    """Clamp alpha/beta away from zero and keep exp(V) positive and finite."""
    for k in model.scale_slots():
        model.params[k] = clamp_scale(model.params[k])
    for k in model.monotone_slots():
        if k.endswith(".V"):
            np.clip(model.params[k], -V_BOUND, V_BOUND, out=model.params[k])


def assert_invariants(model: Model) -> None:
    for k in model.scale_slots():
        if np.any(np.abs(model.params[k]) < SCALE_FLOOR):
            raise AssertionError(f"{k} has an entry below the magnitude floor")
    for i, s in enumerate(model.specs):
        if s.kind == "monotone_dense" and s.parametrization == "exp":
            w = effective_weight(model, i)
            if not (np.all(w > 0) and np.all(np.isfinite(w))):
                raise AssertionError(f"layer {i} has a non-positive effective weight")


def train_step(model: Model, x: np.ndarray, y: np.ndarray, kind: str, optimizer,
               weight_decay: float = 0.0) -> float:
    """One gradient step in place; returns the batch loss before the update."""
    tape = T.Tape()
    logits, _, _ = forward_tape(model, tape, x)
    value = loss(logits, y, kind)
    grads = T.gradients(tape, value)
    if weight_decay:
        for k in grads:
            if k.endswith((".W", ".V", ".K")):
                grads[k] = grads[k] + weight_decay * model.params[k]
    optimizer.step(model.params, grads)
    enforce_invariants(model)
    return float(np.asarray(value.value))


def _predict_labels(logits: np.ndarray) -> np.ndarray:
    if logits.ndim == 1 or logits.shape[1] == 1:
        # sigmoid(z) > 0.5  <=>  z > 0; z == 0 goes to class 0
        return (logits.reshape(-1) > 0.0).astype(np.int64)
    return np.argmax(logits, axis=1)


def predict(model: Model, x, batch_size: int = 2048) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = [_predict_labels(np.asarray(forward(model, x[i:i + batch_size])[0]))
           for i in range(0, len(x), batch_size)]
    return np.concatenate(out)


def evaluate_accuracy(model: Model, data: Dataset, batch_size: int = 2048) -> float:
    """Fraction of correctly classified samples."""
    if data is None or len(data) == 0:
        raise ContractError("cannot evaluate on an empty dataset")
    return float(np.mean(predict(model, data.features, batch_size) == data.labels))


def train(model: Model, train_data: Dataset, config: TrainConfig, test_data: Dataset | None = None,
          on_epoch: Callable[[int, TrainHistory], None] | None = None,
          range_samples: int = 10000) -> tuple[Model, TrainHistory]:
    """Train a copy of ``model``; deterministic given ``config.seed``."""
    if len(train_data) == 0:
        raise ContractError("training set is empty")
    if train_data.features[0].size != model.input_dim:
        raise ContractError(f"dataset has {train_data.features[0].size} features, model expects {model.input_dim}")
    model = model.copy()
    kind = loss_kind_for(model, config.loss)
    opt = make_optimizer(config)
    rng = np.random.default_rng(config.seed)
    x_all, y_all = train_data.features, train_data.labels
    n = len(train_data)
    history = TrainHistory()
    enforce_invariants(model)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for b, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start:start + config.batch_size]
            try:
                value = train_step(model, x_all[idx], y_all[idx], kind, opt, config.weight_decay)
            except NonFiniteError as exc:
                raise DivergedTrainingError(epoch, b) from exc
            if not np.isfinite(value):
                raise DivergedTrainingError(epoch, b)
            total += value * len(idx)
        assert_invariants(model)
        history.loss.append(total / n)
        try:
            history.accuracy.append(evaluate_accuracy(model, train_data))
        except NonFiniteError as exc:
            raise DivergedTrainingError(epoch, b) from exc
        if on_epoch is not None:
            on_epoch(epoch, history)
        log.debug("epoch %d loss %.5f acc %.4f", epoch, history.loss[-1], history.accuracy[-1])
    sample = x_all if n <= range_samples else x_all[np.sort(rng.choice(n, range_samples, replace=False))]
    record_input_ranges(model, sample)
    model.meta["train_config"] = {f.name: getattr(config, f.name) for f in fields(config)}
    if test_data is not None:
        history.test_accuracy = evaluate_accuracy(model, test_data)
    return model, history
