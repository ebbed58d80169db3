"""Hierarchical monotone features over convolutional filters.

Architecture: one convolution -> global max per filter ("summaries") ->
monotone block -> hidden features -> monotone block -> class logits.  Each
block has its own alpha/beta, so monotonicity holds summaries->hidden and
hidden->logits; summaries->logits is only guaranteed along a single path
k -> f -> j, with sign S1(k, f) * S2(f, j).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .errors import ContractError, DimensionError, SpecError
from .model import LayerSpec, Model, SignMatrix, init_params, monotone, run_layers, scale


@dataclass(frozen=True)
class ConvSpec:
    filters: int = 16
    kernel: tuple[int, int] = (5, 5)
    stride: int = 1
    activation: str = "relu"

    def output_shape(self, image_shape: Sequence[int]) -> tuple[int, int]:
        h, w = image_shape
        kh, kw = self.kernel
        if kh > h or kw > w:
            raise SpecError(f"kernel {kh}x{kw} does not fit image {h}x{w}")
        return (h - kh) // self.stride + 1, (w - kw) // self.stride + 1


def conv_forward(spec: ConvSpec, kernels, bias, image) -> np.ndarray:
    """Activated valid cross-correlation; ``image`` is H x W or B x H x W."""
    x = np.asarray(image, dtype=np.float64)
    single = x.ndim == 2
    if single:
        x = x[None]
    k = np.asarray(kernels, dtype=np.float64)
    if k.shape != (spec.filters, *spec.kernel):
        raise DimensionError(f"kernels {k.shape} do not match spec {(spec.filters, *spec.kernel)}")
    if x.ndim != 3:
        raise DimensionError(f"expected H x W or B x H x W images, got {x.shape}")
    spec.output_shape(x.shape[1:])
    act = {"relu": T.relu, "tanh": T.tanh, "sigmoid": T.sigmoid, "identity": lambda a: a}[spec.activation]
    maps = np.asarray(act(T.conv2d(x, k, bias, stride=spec.stride)))
    return maps[0] if single else maps


def maxpool_summary(maps) -> tuple[np.ndarray, list[tuple[int, int]]]:
    """Global maximum per map and its location (first maximum in row-major order)."""
    m = np.asarray(maps, dtype=np.float64)
    if m.ndim == 2:
        m = m[None]
    if m.ndim != 3 or m.shape[0] < 1:
        raise DimensionError(f"expected K x H x W maps, got {m.shape}")
    flat = m.reshape(m.shape[0], -1)
    idx = flat.argmax(axis=1)
    locs = [tuple(int(v) for v in np.unravel_index(i, m.shape[1:])) for i in idx]
    return flat[np.arange(len(idx)), idx], locs


def hierarchical_spec(conv: ConvSpec, mono1_widths: Sequence[int], mono2_widths: Sequence[int] = (),
                      classes: int = 10, monotone_activation: str = "tanh") -> list[LayerSpec]:
    """Layer stack; ``mono1_widths[-1]`` is the hidden (interpretable) width."""
    if conv.filters < 1 or not mono1_widths or classes < 2:
        raise SpecError("need >= 1 filter, >= 1 summaries->hidden width and >= 2 classes")
    specs = [
        LayerSpec("conv", conv.filters, conv.activation, kernel=tuple(conv.kernel), stride=conv.stride),
        LayerSpec("maxpool", conv.filters),
        scale(conv.filters),
    ]
    specs += [monotone(w, monotone_activation) for w in mono1_widths]
    hidden = mono1_widths[-1]
    specs.append(scale(hidden))
    specs.append(scale(hidden))
    specs += [monotone(w, monotone_activation) for w in mono2_widths]
    specs.append(monotone(classes, "identity"))
    specs.append(scale(classes))
    return specs


def build_hierarchical(conv: ConvSpec, mono1_widths: Sequence[int], mono2_widths: Sequence[int] = (),
                       classes: int = 10, image_shape: Sequence[int] = (28, 28), seed: int = 0) -> Model:
    conv.output_shape(image_shape)
    specs = hierarchical_spec(conv, mono1_widths, mono2_widths, classes)
    model = Model(specs, tuple(image_shape), init_params(specs, image_shape, seed, monotone_init="fan_in"))
    if len(model.blocks) != 2:
        raise SpecError("hierarchical model must have exactly two monotone blocks")
    model.meta["seed"] = int(seed)
    model.meta["conv"] = {"filters": conv.filters, "kernel": list(conv.kernel), "stride": conv.stride,
                          "activation": conv.activation}
    return model


def conv_spec_of(model: Model) -> ConvSpec:
    s = model.specs[0]
    return ConvSpec(s.width, tuple(s.kernel), s.stride, s.activation)


def stage_signs(model: Model) -> tuple[SignMatrix, SignMatrix]:
    """(summaries x hidden, hidden x classes) sign matrices."""
    _require_hierarchical(model)
    a, b = model.subnets()
    return a.signs(), b.signs()


def path_sign(model: Model, summary: int, hidden: int, cls: int) -> int:
    s1, s2 = stage_signs(model)
    return s1(summary, hidden) * s2(hidden, cls)


def _require_hierarchical(model: Model) -> None:
    if not model.is_convolutional or len(model.blocks) != 2:
        raise ContractError("expected a hierarchical (conv + two monotone blocks) model")


def hierarchical_forward(model: Model, images) -> dict[str, np.ndarray]:
    """Maps, summaries, hidden features and logits for a batch of images."""
    _require_hierarchical(model)
    x = np.asarray(images, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    if x.shape[1:] != model.input_shape:
        raise ContractError(f"image shape {x.shape[1:]} does not match model input {model.input_shape}")
    trace: dict = {}
    logits = run_layers(model, x, 0, len(model.specs), trace=trace)
    b1, b2 = model.blocks
    return {
        "maps": np.asarray(trace[0]),
        "summaries": np.asarray(trace[1]),
        "hidden": np.asarray(trace[b1.beta]),
        "logits": np.asarray(logits),
    }


@dataclass
class FilterTrace:
    filter: int
    sign: int
    summary: float
    location: tuple[int, int]
    activation_map: np.ndarray = field(repr=False)


@dataclass
class FeatureTrace:
    feature: int
    sign: int
    activation: float
    filters: list[FilterTrace]


@dataclass
class ExplanationTrace:
    sample_id: int | None
    target_class: int
    predicted_class: int
    true_class: int | None
    features: list[FeatureTrace]
    note: str = ""

    def to_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "target_class": self.target_class,
            "predicted_class": self.predicted_class,
            "true_class": self.true_class,
            "note": self.note,
            "features": [
                {"feature": f.feature, "sign": f.sign, "activation": f.activation,
                 "filters": [{"filter": k.filter, "sign": k.sign, "summary": k.summary,
                              "location": list(k.location)} for k in f.filters]}
                for f in self.features
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def render(self) -> str:
        lines = [f"sample {self.sample_id}: true {self.true_class}, predicted {self.predicted_class}, "
                 f"inspecting class {self.target_class}"]
        if not self.features:
            lines.append(f"  {self.note}")
        for f in self.features:
            lines.append(f"  hidden feature {f.feature} (activation {f.activation:+.4f}) increases class "
                         f"{self.target_class}")
            for k in f.filters:
                lines.append(f"    filter {k.filter}: summary {k.summary:.4f} at {k.location}")
        return "\n".join(lines) + "\n"


NO_FEATURES = "no increasing features"


def trace_explanation(model: Model, image, target_class: int, sample_id: int | None = None,
                      true_class: int | None = None, max_features: int | None = None,
                      max_filters: int | None = None, require_trained: bool = True) -> ExplanationTrace:
    """Why does ``image`` score for ``target_class``?

    Keeps hidden features that increase ``target_class`` (ordered by
    activation, highest first) and, under each, the filters that increase
    that feature (ordered by summary value) with their activation maps.
    """
    _require_hierarchical(model)
    if require_trained and "train_config" not in model.meta:
        raise ContractError("trace_explanation needs a trained model")
    img = np.asarray(image, dtype=np.float64)
    if img.shape != model.input_shape:
        raise ContractError(f"image shape {img.shape} does not match model input {model.input_shape}")
    if not 0 <= target_class < model.output_width:
        raise ContractError(f"class {target_class} out of range")
    out = hierarchical_forward(model, img[None])
    maps, summaries, hidden = out["maps"][0], out["summaries"][0], out["hidden"][0]
    predicted = int(np.argmax(out["logits"][0]))
    s1, s2 = stage_signs(model)
    feats = [f for f in range(s2.shape[0]) if s2(f, target_class) > 0]
    feats.sort(key=lambda f: (-hidden[f], f))
    if max_features is not None:
        feats = feats[:max_features]
    _, locs = maxpool_summary(maps)
    traces = []
    for f in feats:
        filt = [k for k in range(s1.shape[0]) if s1(k, f) > 0]
        filt.sort(key=lambda k: (-summaries[k], k))
        if max_filters is not None:
            filt = filt[:max_filters]
        traces.append(FeatureTrace(f, 1, float(hidden[f]), [
            FilterTrace(k, 1, float(summaries[k]), locs[k], maps[k].copy()) for k in filt]))
    return ExplanationTrace(sample_id, target_class, predicted, true_class, traces,
                            "" if traces else NO_FEATURES)


def write_pgm(path, array: np.ndarray) -> None:
    """Binary PGM (P5); values are min-max scaled to 0..255 (white = high)."""
    a = np.asarray(array, dtype=np.float64)
    lo, hi = float(a.min()), float(a.max())
    scaled = np.zeros_like(a) if hi <= lo else (a - lo) / (hi - lo)
    pix = np.round(scaled * 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{a.shape[1]} {a.shape[0]}\n255\n".encode("ascii"))
        f.write(pix.tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM")
    w, h = (int(v) for v in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w)


def dump_trace(trace: ExplanationTrace, image: np.ndarray, directory) -> list[Path]:
    """Write the image, each listed activation map (PGM) and the JSON trace."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    written = [d / "image.pgm"]
    write_pgm(written[0], image)
    for f in trace.features:
        for k in f.filters:
            p = d / f"feature{f.feature:02d}_filter{k.filter:02d}.pgm"
            if not p.exists():
                write_pgm(p, k.activation_map)
            written.append(p)
    (d / "trace.json").write_text(trace.to_json(), encoding="utf-8")
    written.append(d / "trace.json")
    return written
