"""Dense float64 tensors and a reverse-mode differentiation tape.

Every operator in this module works on plain values (``Tensor``, numpy arrays,
Python scalars) and returns a ``Tensor``.  When at least one argument is a
``Node`` belonging to a ``Tape`` the call is recorded on that tape instead and a
new ``Node`` is returned, so the same model code serves both inference and
training::

    tape = Tape()
    w = tape.param("w", [[2.0]])
    loss = sum_all(matmul(tape.const([[3.0]]), w))
    grads = gradients(tape, loss)      # {"w": array([[3.]])}
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, NonFiniteError

__all__ = [
    "Tensor",
    "Node",
    "Tape",
    "as_array",
    "matmul",
    "elementwise",
    "add",
    "mul",
    "neg",
    "exp",
    "tanh",
    "relu",
    "sigmoid",
    "identity",
    "add_bias",
    "mul_cols",
    "sum_all",
    "mean_all",
    "bce_with_logits",
    "softmax_ce",
    "conv2d",
    "global_maxpool",
    "gradients",
    "OPS",
]


class Tensor:
    """Immutable dense array of 64-bit floats in row-major order."""

    __slots__ = ("_array",)

    def __init__(self, values: Any):
        arr = np.array(values, dtype=np.float64, order="C", copy=True)
        arr.setflags(write=False)
        self._array = arr

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        # Internal fast path: takes ownership of a freshly computed array.
        t = cls.__new__(cls)
        arr = np.asarray(arr, dtype=np.float64, order="C")
        arr.setflags(write=False)
        t._array = arr
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self._array.shape

    @property
    def data(self) -> np.ndarray:
        """Flat row-major view of the values."""
        return self._array.reshape(-1)

    @property
    def array(self) -> np.ndarray:
        return self._array

    def numpy(self) -> np.ndarray:
        return self._array.copy()

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self._array
        return self._array.astype(dtype)

    def __len__(self) -> int:
        return len(self._array)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, data={np.array2string(self._array, threshold=20)})"

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Tensor):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self._array, other._array))

    __hash__ = None  # type: ignore[assignment]


def as_array(x: Any) -> np.ndarray:
    if isinstance(x, Node):
        return x.value.array
    if isinstance(x, Tensor):
        return x.array
    return np.asarray(x, dtype=np.float64)


# ---------------------------------------------------------------------------
# Operator registry
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Op:
    name: str
    forward: Callable[..., np.ndarray]
    # backward(grad_out, inputs, out, **attrs) -> tuple of input gradients
    backward: Callable[..., tuple]


OPS: dict[str, Op] = {}


def _register(name: str, forward, backward) -> None:
    OPS[name] = Op(name, forward, backward)


def _same_or_scalar(a: np.ndarray, b: np.ndarray, name: str) -> None:
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise DimensionError(f"{name}: shapes {a.shape} and {b.shape} are not broadcastable")


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    # scalar-with-tensor broadcast is the only form allowed
    return np.full(shape, g.sum()) if shape != () else np.asarray(g.sum())


def _matmul_fwd(a, b):
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return a @ b


_register("matmul", _matmul_fwd, lambda g, ins, out: (g @ ins[1].T, ins[0].T @ g))


def _add_fwd(a, b):
    _same_or_scalar(a, b, "add")
    return a + b


def _mul_fwd(a, b):
    _same_or_scalar(a, b, "mul")
    return a * b


_register("add", _add_fwd,
          lambda g, ins, out: (_unbroadcast(g, ins[0].shape), _unbroadcast(g, ins[1].shape)))
_register("mul", _mul_fwd,
          lambda g, ins, out: (_unbroadcast(g * ins[1], ins[0].shape),
                               _unbroadcast(g * ins[0], ins[1].shape)))
_register("neg", lambda a: -a, lambda g, ins, out: (-g,))
_register("exp", np.exp, lambda g, ins, out: (g * out,))
_register("tanh", np.tanh, lambda g, ins, out: (g * (1.0 - out * out),))
# relu'(0) := 0
_register("relu", lambda a: np.maximum(a, 0.0), lambda g, ins, out: (g * (ins[0] > 0.0),))
_register("identity", lambda a: a.copy(), lambda g, ins, out: (g,))


def _sigmoid(a):
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    e = np.exp(a[~pos])
    out[~pos] = e / (1.0 + e)
    return out


_register("sigmoid", _sigmoid, lambda g, ins, out: (g * out * (1.0 - out),))


def _add_bias_fwd(x, b):
    if x.ndim != 2 or b.shape != (x.shape[1],):
        raise DimensionError(f"add_bias: bias {b.shape} does not match rows of {x.shape}")
    return x + b


_register("add_bias", _add_bias_fwd, lambda g, ins, out: (g, g.sum(axis=0)))


def _mul_cols_fwd(x, v):
    if x.ndim != 2 or v.shape != (x.shape[1],):
        raise DimensionError(f"mul_cols: scale {v.shape} does not match rows of {x.shape}")
    return x * v


_register("mul_cols", _mul_cols_fwd,
          lambda g, ins, out: (g * ins[1], (g * ins[0]).sum(axis=0)))
_register("sum_all", lambda a: np.asarray(a.sum()),
          lambda g, ins, out: (np.full(ins[0].shape, float(g)),))
_register("mean_all", lambda a: np.asarray(a.mean()),
          lambda g, ins, out: (np.full(ins[0].shape, float(g) / max(ins[0].size, 1)),))


def _bce_fwd(z, y):
    z = z.reshape(-1)
    y = y.reshape(-1)
    if z.shape != y.shape:
        raise DimensionError(f"bce_with_logits: {z.shape[0]} logits for {y.shape[0]} labels")
    # max(z,0) - z*y + log(1 + exp(-|z|))
    return np.asarray(np.mean(np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))))


def _bce_bwd(g, ins, out):
    z, y = ins
    p = _sigmoid(z.reshape(-1)).reshape(z.shape)
    return (float(g) * (p - y.reshape(z.shape)) / z.size, np.zeros_like(y))


_register("bce_with_logits", _bce_fwd, _bce_bwd)


def _log_softmax(z):
    m = z.max(axis=1, keepdims=True)
    s = z - m
    return s - np.log(np.exp(s).sum(axis=1, keepdims=True))


def _softmax_ce_fwd(z, y):
    if z.ndim != 2 or y.shape != (z.shape[0],):
        raise DimensionError(f"softmax_ce: logits {z.shape} vs labels {y.shape}")
    idx = y.astype(np.int64)
    return np.asarray(-_log_softmax(z)[np.arange(len(idx)), idx].mean())


def _softmax_ce_bwd(g, ins, out):
    z, y = ins
    p = np.exp(_log_softmax(z))
    p[np.arange(len(y)), y.astype(np.int64)] -= 1.0
    return (float(g) * p / z.shape[0], np.zeros_like(y))


_register("softmax_ce", _softmax_ce_fwd, _softmax_ce_bwd)


def _patches(x, kh, kw, stride):
    # x: B x H x W  ->  B x oh x ow x kh x kw (read-only view)
    b, h, w = x.shape
    oh = (h - kh) // stride + 1
    ow = (w - kw) // stride + 1
    sb, sh, sw = x.strides
    return np.lib.stride_tricks.as_strided(
        x, shape=(b, oh, ow, kh, kw),
        strides=(sb, sh * stride, sw * stride, sh, sw), writeable=False)


def _conv2d_fwd(x, k, bias, stride=1):
    if x.ndim != 3 or k.ndim != 3 or bias.shape != (k.shape[0],):
        raise DimensionError(f"conv2d: images {x.shape}, kernels {k.shape}, bias {bias.shape}")
    kh, kw = k.shape[1:]
    if kh > x.shape[1] or kw > x.shape[2]:
        raise DimensionError(f"conv2d: kernel {kh}x{kw} does not fit image {x.shape[1:]}")
    x = np.ascontiguousarray(x)
    p = _patches(x, kh, kw, stride)
    out = np.einsum("bijuv,kuv->bkij", p, k, optimize=True)
    return out + bias[None, :, None, None]


def _conv2d_bwd(g, ins, out, stride=1):
    x, k, bias = ins
    x = np.ascontiguousarray(x)
    kh, kw = k.shape[1:]
    p = _patches(x, kh, kw, stride)
    gk = np.einsum("bkij,bijuv->kuv", g, p, optimize=True)
    gb = g.sum(axis=(0, 2, 3))
    gx = np.zeros_like(x)
    oh, ow = g.shape[2:]
    # scatter-add each kernel offset
    contrib = np.einsum("bkij,kuv->bijuv", g, k, optimize=True)
    for u in range(kh):
        for v in range(kw):
            gx[:, u:u + stride * oh:stride, v:v + stride * ow:stride] += contrib[:, :, :, u, v]
    return gx, gk, gb


_register("conv2d", _conv2d_fwd, _conv2d_bwd)


def _maxpool_fwd(maps):
    if maps.ndim != 4:
        raise DimensionError(f"global_maxpool: expected B x K x H x W, got {maps.shape}")
    return maps.reshape(maps.shape[0], maps.shape[1], -1).max(axis=2)


def _maxpool_bwd(g, ins, out):
    (maps,) = ins
    b, k = maps.shape[:2]
    flat = maps.reshape(b, k, -1)
    # argmax returns the first maximum in row-major order
    idx = flat.argmax(axis=2)
    gm = np.zeros_like(flat)
    bi, ki = np.meshgrid(np.arange(b), np.arange(k), indexing="ij")
    gm[bi, ki, idx] = g
    return (gm.reshape(maps.shape),)


_register("global_maxpool", _maxpool_fwd, _maxpool_bwd)


# ---------------------------------------------------------------------------
# Tape
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class Node:
    tape: "Tape"
    id: int
    op: str | None          # None for leaves
    inputs: tuple[int, ...]
    value: Tensor
    attrs: dict = field(default_factory=dict)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Node(id={self.id}, op={self.op}, shape={self.shape})"


class Tape:
    """Ordered record of operations; single writer.

    Leaves are either constants or named trainable parameter slots.  Nodes
    are appended in execution order so the list is topologically sorted.
    """

    def __init__(self) -> None:
        self.nodes: list[Node] = []
        self.params: dict[str, int] = {}

    def _leaf(self, value: Any) -> Node:
        node = Node(self, len(self.nodes), None, (), value if isinstance(value, Tensor) else Tensor(value))
        self.nodes.append(node)
        return node

    def const(self, value: Any) -> Node:
        return self._leaf(value)

    def param(self, name: str, value: Any) -> Node:
        if name in self.params:
            raise ContractError(f"parameter slot {name!r} already on tape")
        node = self._leaf(value)
        self.params[name] = node.id
        return node

    def record(self, op: str, inputs: Sequence[Node], out: np.ndarray, attrs: dict) -> Node:
        node = Node(self, len(self.nodes), op, tuple(n.id for n in inputs), Tensor._wrap(out), attrs)
        self.nodes.append(node)
        return node

    def replay(self, feeds: dict[int, Any] | None = None) -> list[Tensor]:
        """Re-run every recorded operator; leaves take ``feeds`` or their cached value."""
        feeds = feeds or {}
        values: list[np.ndarray] = []
        for node in self.nodes:
            if node.op is None:
                values.append(as_array(feeds[node.id]) if node.id in feeds else node.value.array)
            else:
                args = [values[i] for i in node.inputs]
                values.append(_run(node.op, args, node.attrs))
        return [Tensor._wrap(v) for v in values]


def _run(name: str, args: list[np.ndarray], attrs: dict) -> np.ndarray:
    op = OPS[name]
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        out = np.asarray(op.forward(*args, **attrs), dtype=np.float64)
    if not np.all(np.isfinite(out)) and all(np.all(np.isfinite(a)) for a in args):
        raise NonFiniteError(f"{name} produced non-finite values from finite inputs")
    return out


def _apply(name: str, *args: Any, **attrs: Any):
    tape = None
    for a in args:
        if isinstance(a, Node):
            if tape is not None and a.tape is not tape:
                raise ContractError(f"{name}: inputs come from different tapes")
            tape = a.tape
    arrays = [as_array(a) for a in args]
    out = _run(name, arrays, attrs)
    if tape is None:
        return Tensor._wrap(out)
    nodes = [a if isinstance(a, Node) else tape.const(a) for a in args]
    return tape.record(name, nodes, out, attrs)


def matmul(a, b):
    return _apply("matmul", a, b)


_UNARY = ("exp", "tanh", "relu", "sigmoid", "neg", "identity")
_BINARY = ("mul", "add")


def elementwise(op: str, *args):
    """Apply a named elementwise operator (``exp``, ``tanh``, ``relu``, ``sigmoid``,
    ``identity``, ``neg``, ``mul``, ``add``)."""
    if op in _UNARY:
        if len(args) != 1:
            raise ContractError(f"{op} takes one argument")
    elif op in _BINARY:
        if len(args) != 2:
            raise ContractError(f"{op} takes two arguments")
    else:
        raise ContractError(f"unknown elementwise operator {op!r}")
    return _apply(op, *args)


def add(a, b):
    return _apply("add", a, b)


def mul(a, b):
    return _apply("mul", a, b)


def neg(a):
    return _apply("neg", a)


def exp(a):
    return _apply("exp", a)


def tanh(a):
    return _apply("tanh", a)


def relu(a):
    return _apply("relu", a)


def sigmoid(a):
    return _apply("sigmoid", a)


def identity(a):
    return _apply("identity", a)


def add_bias(x, b):
    """Add a length-n vector to every row of an m x n matrix."""
    return _apply("add_bias", x, b)


def mul_cols(x, v):
    """Multiply column j of an m x n matrix by ``v[j]``."""
    return _apply("mul_cols", x, v)


def sum_all(a):
    return _apply("sum_all", a)


def mean_all(a):
    return _apply("mean_all", a)


def bce_with_logits(logits, labels):
    return _apply("bce_with_logits", logits, labels)


def softmax_ce(logits, labels):
    return _apply("softmax_ce", logits, labels)


def conv2d(images, kernels, bias, stride: int = 1):
    """Valid cross-correlation of B x H x W images with K x kh x kw kernels."""
    return _apply("conv2d", images, kernels, bias, stride=stride)


def global_maxpool(maps):
    return _apply("global_maxpool", maps)


def gradients(tape: Tape, loss: Node, seed: float = 1.0) -> dict[str, np.ndarray]:
    """Reverse accumulation from a scalar ``loss`` node.

    Returns d(seed * loss)/d(param) for every parameter slot on the tape;
    slots the loss does not depend on get zeros.
    """
    if not isinstance(loss, Node) or loss.tape is not tape:
        raise ContractError("loss must be a node on the given tape")
    if loss.value.array.size != 1:
        raise ContractError(f"loss must be scalar, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {loss.id: np.full(loss.shape, float(seed))}
    for node in reversed(tape.nodes[: loss.id + 1]):
        g = grads.pop(node.id, None)
        if g is None or node.op is None:
            if g is not None:
                grads[node.id] = g
            continue
        ins = [tape.nodes[i].value.array for i in node.inputs]
        in_grads = OPS[node.op].backward(g, ins, node.value.array, **node.attrs)
        for i, gi in zip(node.inputs, in_grads):
            if i in grads:
                grads[i] = grads[i] + gi
            else:
                grads[i] = np.asarray(gi, dtype=np.float64)
    return {
        name: grads.get(nid, np.zeros(tape.nodes[nid].shape))
        for name, nid in tape.params.items()
    }
