"""MonoNet architectures.

A MonoNet is an unconstrained prefix (dense layers, or a convolution followed
by a global max-pool) feeding one or more *monotone blocks*.  A block is::

    scale(alpha) -> monotone_dense+ -> scale(beta)

Monotone dense layers compute ``act(h @ exp(V) + b)`` with a non-decreasing
``act``, so every output of the block is non-decreasing in every input of the
block once the alpha/beta rescaling is undone.  The direction of input ``i``
with respect to output ``j`` is ``sign(alpha_i) * sign(beta_j)``.
"""
from __future__ import annotations

import copy
import io
import json
import struct
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from . import tensor as T
from .errors import ContractError, DimensionError, FormatError, SpecError, UnsupportedVersionError

KINDS = ("free_dense", "monotone_dense", "scale", "conv", "maxpool")
ACTIVATIONS = ("tanh", "relu", "sigmoid", "identity")
SCALE_FLOOR = 1e-6

_ACT = {
    "tanh": T.tanh,
    "relu": T.relu,
    "sigmoid": T.sigmoid,
    "identity": lambda x: x,
}


@dataclass(frozen=True)
class LayerSpec:
    """One entry of a declarative layer stack.

    ``parametrization`` applies to monotone layers only: ``"exp"`` stores the
    pre-parameter V and uses exp(V); ``"raw"`` stores effective weights as-is
    (imported or deliberately tampered layers, see ``verification``).
    """

    kind: str
    width: int
    activation: str = "identity"
    parametrization: str = "exp"
    kernel: tuple[int, int] | None = None
    stride: int = 1

    def __post_init__(self):
        if self.kernel is not None:
            object.__setattr__(self, "kernel", tuple(int(k) for k in self.kernel))


def free(width: int, activation: str = "relu") -> LayerSpec:
    return LayerSpec("free_dense", width, activation)


def monotone(width: int, activation: str = "tanh") -> LayerSpec:
    return LayerSpec("monotone_dense", width, activation)


def scale(width: int, activation: str = "identity") -> LayerSpec:
    return LayerSpec("scale", width, activation)


def mononet_spec(
    free_widths: Sequence[int],
    interpretable_width: int,
    monotone_widths: Sequence[int],
    n_outputs: int = 1,
    *,
    free_activation: str = "relu",
    interpretable_activation: str = "tanh",
    monotone_activation: str = "tanh",
    output_activation: str = "identity",
) -> list[LayerSpec]:
    """Layer stack ``input - free_widths - interpretable - monotone_widths - n_outputs``.

    ``mononet_spec([64, 64], 3, [64])`` gives the (input-64-64-3-64-1) network.
    The interpretable layer defaults to tanh: a narrow relu layer loses units
    to the dead-relu regime, and bounded activations give finite probe ranges.
    """
    specs = [free(w, free_activation) for w in free_widths]
    specs.append(free(interpretable_width, interpretable_activation))
    specs.append(scale(interpretable_width))
    specs += [monotone(w, monotone_activation) for w in monotone_widths]
    specs.append(monotone(n_outputs, "identity"))
    specs.append(scale(n_outputs, output_activation))
    return specs


def parse_spec_string(text: str, n_outputs: int = 1, **kwargs) -> list[LayerSpec]:
    """Parse a CLI width list such as ``"64,64,3,64"``.

    Widths before the interpretable width are free layers, widths after it
    are monotone layers, and the final ``n_outputs`` layer is implied.  The
    interpretable entry can be marked with ``*`` (``"64,64,3*,64"``);
    unmarked, it is the narrowest width (first occurrence).
    """
    parts = [p.strip() for p in text.split(",") if p.strip()]
    if len(parts) < 2:
        raise SpecError(f"spec {text!r} needs at least a free and an interpretable width")
    marked = [i for i, p in enumerate(parts) if p.endswith("*")]
    try:
        widths = [int(p.rstrip("*")) for p in parts]
    except ValueError as exc:
        raise SpecError(f"spec {text!r} contains a non-integer width") from exc
    if len(marked) > 1:
        raise SpecError(f"spec {text!r} marks more than one interpretable layer")
    k = marked[0] if marked else int(np.argmin(widths))
    if k == 0:
        raise SpecError("interpretable layer needs at least one free layer before it", 0)
    return mononet_spec(widths[:k], widths[k], widths[k + 1:], n_outputs, **kwargs)


@dataclass(frozen=True)
class Block:
    """Index range of one monotone block inside a spec list."""

    alpha: int
    monotone: tuple[int, ...]
    beta: int


def parse_blocks(specs: Sequence[LayerSpec]) -> tuple[int, list[Block]]:
    """Validate ``specs`` and return (prefix length, monotone blocks).

    Accepted grammar::

        prefix := free_dense+ | conv maxpool free_dense*
        stack  := prefix (scale monotone_dense+ scale)+
    """
    for i, s in enumerate(specs):
        if s.kind not in KINDS:
            raise SpecError(f"unknown layer kind {s.kind!r}", i)
        if s.width < 1:
            raise SpecError(f"width must be positive, got {s.width}", i)
        if s.activation not in ACTIVATIONS:
            raise SpecError(f"unknown activation {s.activation!r}", i)
        if s.parametrization not in ("exp", "raw"):
            raise SpecError(f"unknown parametrization {s.parametrization!r}", i)
    n = len(specs)
    i = 0
    if n and specs[0].kind == "conv":
        if specs[0].kernel is None or specs[0].stride < 1:
            raise SpecError("conv layer needs a kernel and a positive stride", 0)
        if n < 2 or specs[1].kind != "maxpool" or specs[1].width != specs[0].width:
            raise SpecError("conv layer must be followed by a maxpool of the same width", 1)
        i = 2
        while i < n and specs[i].kind == "free_dense":
            i += 1
    else:
        while i < n and specs[i].kind == "free_dense":
            i += 1
        if i == 0:
            raise SpecError("stack must start with a free_dense or conv layer", 0)
    prefix = i
    blocks: list[Block] = []
    prev_width = specs[prefix - 1].width
    while i < n:
        if specs[i].kind != "scale":
            raise SpecError(f"expected an input-side scale layer, found {specs[i].kind}", i)
        if specs[i].width != prev_width:
            raise SpecError(f"scale width {specs[i].width} != incoming width {prev_width}", i)
        alpha = i
        i += 1
        mono = []
        while i < n and specs[i].kind == "monotone_dense":
            mono.append(i)
            i += 1
        if not mono:
            raise SpecError("a scale layer must be followed by at least one monotone_dense layer",
                            min(i, n - 1) if i < n else alpha)
        if i >= n or specs[i].kind != "scale":
            raise SpecError("monotone layers must end with an output-side scale layer", min(i, n - 1))
        if specs[i].width != specs[mono[-1]].width:
            raise SpecError(f"scale width {specs[i].width} != incoming width {specs[mono[-1]].width}", i)
        blocks.append(Block(alpha, tuple(mono), i))
        prev_width = specs[i].width
        i += 1
    if not blocks:
        raise SpecError("stack has no monotone block", n - 1)
    for b in blocks[:-1]:
        if specs[b.beta].activation != "identity":
            raise SpecError("only the final scale layer may carry an output activation", b.beta)
    if specs[blocks[-1].beta].activation not in ("identity", "sigmoid"):
        raise SpecError("output activation must be identity or sigmoid", blocks[-1].beta)
    return prefix, blocks


@dataclass(frozen=True)
class SignMatrix:
    """Monotone direction of (input unit i, output unit j), entries in {+1, -1}."""

    entries: np.ndarray

    def __call__(self, i: int, j: int) -> int:
        return int(self.entries[i, j])

    @property
    def shape(self) -> tuple[int, int]:
        return self.entries.shape

    def tolist(self) -> list[list[int]]:
        return self.entries.astype(int).tolist()


@dataclass
class Model:
    specs: list[LayerSpec]
    input_shape: tuple[int, ...]
    params: dict[str, np.ndarray]
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.input_shape = tuple(int(d) for d in self.input_shape)
        self.prefix, self.blocks = parse_blocks(self.specs)

    @property
    def input_dim(self) -> int:
        return int(np.prod(self.input_shape))

    @property
    def is_convolutional(self) -> bool:
        return self.specs[0].kind == "conv"

    @property
    def interpretable_width(self) -> int:
        return self.specs[self.blocks[-1].alpha].width

    @property
    def output_width(self) -> int:
        return self.specs[-1].width

    @property
    def output_activation(self) -> str:
        return self.specs[-1].activation

    def copy(self) -> "Model":
        return Model(list(self.specs), self.input_shape,
                     {k: v.copy() for k, v in self.params.items()}, copy.deepcopy(self.meta))

    def subnets(self) -> list["MonotoneSubnet"]:
        return [MonotoneSubnet(self, b) for b in self.blocks]

    @property
    def alpha(self) -> np.ndarray:
        return self.params[f"{self.blocks[-1].alpha}.scale"]

    @property
    def beta(self) -> np.ndarray:
        return self.params[f"{self.blocks[-1].beta}.scale"]

    def scale_slots(self) -> list[str]:
        return [f"{i}.scale" for i, s in enumerate(self.specs) if s.kind == "scale"]

    def monotone_slots(self) -> list[str]:
        return [f"{i}.V" if s.parametrization == "exp" else f"{i}.W"
                for i, s in enumerate(self.specs) if s.kind == "monotone_dense"]


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    s = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, size=shape)


def init_params(specs: Sequence[LayerSpec], input_shape: Sequence[int], seed: int,
                monotone_init: str = "fixed") -> dict[str, np.ndarray]:
    """Initial parameters.

    ``monotone_init="fixed"`` draws V ~ N(-1, 0.5); ``"fan_in"`` centres V at
    -0.5*log(fan_in) (weights near 1/sqrt(fan_in)), which keeps deep or
    wide monotone tanh stacks out of saturation.
    """
    if monotone_init not in ("fixed", "fan_in"):
        raise SpecError(f"unknown monotone_init {monotone_init!r}")
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    width = int(np.prod(input_shape))
    for i, s in enumerate(specs):
        if s.kind == "conv":
            kh, kw = s.kernel
            params[f"{i}.K"] = _glorot(rng, kh * kw, s.width * kh * kw, (s.width, kh, kw))
            params[f"{i}.b"] = np.zeros(s.width)
        elif s.kind == "free_dense":
            params[f"{i}.W"] = _glorot(rng, width, s.width, (width, s.width))
            params[f"{i}.b"] = np.zeros(s.width)
        elif s.kind == "monotone_dense":
            mean = -1.0 if monotone_init == "fixed" else -0.5 * np.log(width)
            params[f"{i}.V"] = rng.normal(mean, 0.5, size=(width, s.width))
            params[f"{i}.b"] = np.zeros(s.width)
        elif s.kind == "scale":
            v = rng.choice([-1.0, 1.0], size=s.width) + rng.normal(0.0, 0.01, size=s.width)
            params[f"{i}.scale"] = clamp_scale(v)
        width = s.width
    return params


def clamp_scale(v: np.ndarray) -> np.ndarray:
    """Push every entry to magnitude >= 1e-6, keeping its sign (zero -> +1e-6)."""
    sign = np.where(v < 0, -1.0, 1.0)
    return np.where(np.abs(v) < SCALE_FLOOR, sign * SCALE_FLOOR, v)


def build_mononet(specs: Sequence[LayerSpec], input_dim: int, seed: int) -> Model:
    """Initialise a dense MonoNet with exactly one monotone block."""
    specs = list(specs)
    prefix, blocks = parse_blocks(specs)
    if specs[0].kind != "free_dense":
        raise SpecError("a dense MonoNet starts with free_dense layers", 0)
    if len(blocks) != 1:
        raise SpecError("a dense MonoNet has exactly one alpha/beta block", blocks[1].alpha)
    if input_dim < 1:
        raise ContractError("input_dim must be positive")
    model = Model(specs, (input_dim,), init_params(specs, (input_dim,), seed))
    model.meta["seed"] = int(seed)
    return model


# ---------------------------------------------------------------------------
# Forward passes
# ---------------------------------------------------------------------------

def _effective(model: Model, i: int, get: Callable[[str], Any]):
    s = model.specs[i]
    if s.parametrization == "exp":
        return T.exp(get(f"{i}.V"))
    return get(f"{i}.W")


def effective_weight(model: Model, i: int) -> np.ndarray:
    """Effective weight matrix of monotone layer ``i`` as a plain array."""
    return np.asarray(_effective(model, i, lambda k: model.params[k]))


def run_layers(model: Model, x, start: int, stop: int, get: Callable[[str], Any] | None = None,
               trace: dict | None = None):
    """Evaluate layers ``start..stop-1``; ``get`` maps slot names to values or tape nodes.

    ``trace`` (optional) receives the output of every layer keyed by index.
    The output activation of the final scale layer is *not* applied, so the
    result of running to the end is the logits.
    """
    get = get or (lambda k: model.params[k])
    h = x
    last = len(model.specs) - 1
    for i in range(start, stop):
        s = model.specs[i]
        if s.kind == "conv":
            h = _ACT[s.activation](T.conv2d(h, get(f"{i}.K"), get(f"{i}.b"), stride=s.stride))
        elif s.kind == "maxpool":
            h = T.global_maxpool(h)
        elif s.kind == "free_dense":
            h = _ACT[s.activation](T.add_bias(T.matmul(h, get(f"{i}.W")), get(f"{i}.b")))
        elif s.kind == "monotone_dense":
            w = _effective(model, i, get)
            h = _ACT[s.activation](T.add_bias(T.matmul(h, w), get(f"{i}.b")))
        elif s.kind == "scale":
            h = T.mul_cols(h, get(f"{i}.scale"))
            if i != last:
                h = _ACT[s.activation](h)
        if trace is not None:
            trace[i] = h
    return h


def _check_input(model: Model, x: np.ndarray) -> np.ndarray:
    if model.is_convolutional:
        if x.ndim == 2 and x.shape[1] == model.input_dim:
            x = x.reshape((x.shape[0],) + model.input_shape)
        if x.ndim != 3 or x.shape[1:] != model.input_shape:
            raise DimensionError(f"expected images of shape {model.input_shape}, got {x.shape[1:]}")
        return x
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        raise DimensionError(f"model expects {model.input_dim} input features, got {x.shape[-1]}")
    return x


def forward(model: Model, x) -> tuple[T.Tensor, T.Tensor]:
    """Return (logits, interpretable-layer activations) for a batch ``x``."""
    x = _check_input(model, np.asarray(T.as_array(x), dtype=np.float64))
    b = model.blocks[-1]
    h = run_layers(model, x, 0, b.alpha)
    logits = run_layers(model, h, b.alpha, len(model.specs))
    return logits, h


def forward_tape(model: Model, tape: T.Tape, x, slots: dict[str, T.Node] | None = None):
    """Record a forward pass on ``tape`` with every parameter as a trainable slot."""
    if slots is None:
        slots = {k: tape.param(k, v) for k, v in model.params.items()}
    x = _check_input(model, np.asarray(T.as_array(x), dtype=np.float64))
    b = model.blocks[-1]
    h = run_layers(model, tape.const(x), 0, b.alpha, get=slots.__getitem__)
    logits = run_layers(model, h, b.alpha, len(model.specs), get=slots.__getitem__)
    return logits, h, slots


def predict_proba(model: Model, x) -> np.ndarray:
    logits = np.asarray(forward(model, x)[0])
    if model.output_width == 1:
        return np.asarray(T.sigmoid(logits)).reshape(-1)
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def output(model: Model, x) -> np.ndarray:
    """Logits with the configured output activation applied."""
    logits = forward(model, x)[0]
    return np.asarray(T.sigmoid(logits) if model.output_activation == "sigmoid" else logits)


class MonotoneSubnet:
    """View of one alpha -> monotone+ -> beta block of a model."""

    def __init__(self, model: Model, block: Block):
        self.model = model
        self.block = block

    @property
    def input_width(self) -> int:
        return self.model.specs[self.block.alpha].width

    @property
    def output_width(self) -> int:
        return self.model.specs[self.block.beta].width

    @property
    def alpha(self) -> np.ndarray:
        return self.model.params[f"{self.block.alpha}.scale"]

    @property
    def beta(self) -> np.ndarray:
        return self.model.params[f"{self.block.beta}.scale"]

    def signs(self) -> SignMatrix:
        return SignMatrix(np.outer(np.sign(self.alpha), np.sign(self.beta)).astype(np.int8))

    def stages(self, h: np.ndarray) -> list[np.ndarray]:
        """Increasing-space activations: [alpha*h, monotone layer outputs...].

        Every stage is non-decreasing in every coordinate of the previous one.
        """
        p = self.model.params
        z = np.asarray(h, dtype=np.float64) * self.alpha
        out = [z]
        for i in self.block.monotone:
            z = np.asarray(run_layers(self.model, z, i, i + 1, get=p.__getitem__))
            out.append(z)
        return out

    def resume(self, stage: int, z: np.ndarray) -> list[np.ndarray]:
        """Continue from stage ``stage`` with activations ``z``; returns that stage and all later ones."""
        out = [np.asarray(z, dtype=np.float64)]
        for i in self.block.monotone[stage:]:
            out.append(np.asarray(run_layers(self.model, out[-1], i, i + 1)))
        return out

    def finish(self, last_stage: np.ndarray) -> np.ndarray:
        """Apply beta to the final increasing-space stage."""
        return last_stage * self.beta

    def __call__(self, h: np.ndarray) -> np.ndarray:
        return self.finish(self.stages(h)[-1])

    def input_range(self) -> tuple[np.ndarray, np.ndarray] | None:
        r = self.model.meta.get("input_ranges", {}).get(str(self.block.alpha))
        if r is None:
            return None
        return np.asarray(r[0], dtype=np.float64), np.asarray(r[1], dtype=np.float64)


def monotone_signs(model: Model) -> SignMatrix:
    """sign(alpha_i) * sign(beta_j) for the block ending at the output."""
    return model.subnets()[-1].signs()


def block_inputs(model: Model, x) -> list[np.ndarray]:
    """Activations entering each monotone block for a batch ``x``."""
    x = _check_input(model, np.asarray(T.as_array(x), dtype=np.float64))
    trace: dict[int, Any] = {}
    run_layers(model, x, 0, len(model.specs), trace=trace)
    out = []
    for b in model.blocks:
        out.append(np.asarray(x if b.alpha == 0 else trace[b.alpha - 1]))
    return out


def record_input_ranges(model: Model, x) -> None:
    """Store per-unit min/max of each block's input over ``x`` (used by probes)."""
    ranges = {}
    for b, h in zip(model.blocks, block_inputs(model, x)):
        ranges[str(b.alpha)] = [h.min(axis=0).tolist(), h.max(axis=0).tolist()]
    model.meta["input_ranges"] = ranges


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

MAGIC = b"MNET"
FORMAT_VERSION = 2


def serialize(model: Model) -> bytes:
    """Binary container: magic, u16 version, u32 header length, JSON header, float64 arrays."""
    names = sorted(model.params)
    header = {
        "input_shape": list(model.input_shape),
        "specs": [_spec_dict(s) for s in model.specs],
        "params": [[n, list(model.params[n].shape)] for n in names],
        "meta": model.meta,
    }
    hb = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<HI", FORMAT_VERSION, len(hb)))
    buf.write(hb)
    for n in names:
        buf.write(np.ascontiguousarray(model.params[n], dtype="<f8").tobytes())
    return buf.getvalue()


def _spec_dict(s: LayerSpec) -> dict:
    d = asdict(s)
    d["kernel"] = list(s.kernel) if s.kernel is not None else None
    return d


def deserialize(data: bytes) -> Model:
    if len(data) < 10 or data[:4] != MAGIC:
        raise FormatError("not a MonoNet model file (bad magic)")
    version, hlen = struct.unpack("<HI", data[4:10])
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(
            f"model format version {version} is not supported (this build reads {FORMAT_VERSION})")
    if len(data) < 10 + hlen:
        raise FormatError("truncated model header")
    try:
        header = json.loads(data[10:10 + hlen].decode("utf-8"))
        specs = [LayerSpec(**d) for d in header["specs"]]
        entries = header["params"]
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"corrupt model header: {exc}") from exc
    offset = 10 + hlen
    params = {}
    for name, shape in entries:
        count = int(np.prod(shape)) if shape else 1
        end = offset + 8 * count
        if end > len(data):
            raise FormatError(f"truncated parameter array {name!r}")
        params[name] = np.frombuffer(data[offset:end], dtype="<f8").astype(np.float64).reshape(shape)
        offset = end
    if offset != len(data):
        raise FormatError("trailing bytes after parameter arrays")
    try:
        return Model(specs, tuple(header["input_shape"]), params, header.get("meta", {}))
    except SpecError as exc:
        raise FormatError(f"model file holds an invalid layer stack: {exc}") from exc


def save(model: Model, path) -> None:
    with open(path, "wb") as f:
        f.write(serialize(model))


def load(path) -> Model:
    with open(path, "rb") as f:
        return deserialize(f.read())
