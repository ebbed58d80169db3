"""Independent checks of the monotonicity guarantee and of the gradients.

Probes work on the input of each monotone block (the interpretable layer for
a dense MonoNet) rather than on raw inputs: the guarantee is block-input to
block-output only.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as T
from .errors import ContractError
from .model import LayerSpec, Model, MonotoneSubnet, effective_weight, forward_tape, run_layers
from .training import loss, loss_kind_for

PROBE_TOLERANCE = 1e-9
DEFAULT_DELTAS = (1e-3, 1e-1, 1.0)
# Used when a model carries no recorded activation range for a block input.
FALLBACK_RANGE = (-3.0, 3.0)


@dataclass
class PositivityReport:
    ok: bool
    checked: int
    violations: list[dict] = field(default_factory=list)

    def __bool__(self) -> bool:
        return self.ok


def check_weight_positivity(model: Model) -> PositivityReport:
    """Every effective monotone weight must be finite and strictly positive."""
    bad, checked = [], 0
    for i, s in enumerate(model.specs):
        if s.kind != "monotone_dense":
            continue
        w = effective_weight(model, i)
        checked += w.size
        for r, c in zip(*np.nonzero(~(np.isfinite(w) & (w > 0)))):
            bad.append({"layer": i, "row": int(r), "col": int(c), "value": float(w[r, c])})
    return PositivityReport(not bad, checked, bad)


def corrupt_monotone_weight(model: Model, layer: int, row: int, col: int) -> Model:
    """Copy of ``model`` with one effective monotone weight negated.

    The layer is converted to raw parametrization since exp(V) cannot hold a
    negative value.
    """
    s = model.specs[layer]
    if s.kind != "monotone_dense":
        raise ContractError(f"layer {layer} is not a monotone layer")
    out = model.copy()
    w = effective_weight(model, layer).copy()
    w[row, col] = -w[row, col]
    out.params.pop(f"{layer}.V", None)
    out.params[f"{layer}.W"] = w
    specs = list(out.specs)
    specs[layer] = LayerSpec(s.kind, s.width, s.activation, "raw", s.kernel, s.stride)
    return Model(specs, out.input_shape, out.params, out.meta)


@dataclass
class Violation:
    subnet: int
    stage: str                   # "output" or "layer <index>"
    point: list[float]
    coordinate: int
    output: int
    delta: float
    observed: float
    expected_sign: int


@dataclass
class ProbeReport:
    probes_run: int
    violations: list[Violation] = field(default_factory=list)
    max_violation_magnitude: float = 0.0
    sign_disagreements: int = 0

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_dict(self, max_listed: int = 100) -> dict:
        return {
            "probes_run": self.probes_run,
            "n_violations": len(self.violations),
            "max_violation_magnitude": self.max_violation_magnitude,
            "sign_disagreements": self.sign_disagreements,
            "violations": [asdict(v) for v in self.violations[:max_listed]],
        }

    def to_json(self, max_listed: int = 100) -> str:
        return json.dumps(self.to_dict(max_listed), indent=2, sort_keys=True)


def _pre_activation(sub: MonotoneSubnet, pos: int, z: np.ndarray) -> np.ndarray:
    i = sub.block.monotone[pos]
    return z @ effective_weight(sub.model, i) + sub.model.params[f"{i}.b"]


def _sample_inputs(sub: MonotoneSubnet, n: int, rng: np.random.Generator, ranges=None) -> np.ndarray:
    r = ranges if ranges is not None else sub.input_range()
    if r is None:
        lo = np.full(sub.input_width, FALLBACK_RANGE[0])
        hi = np.full(sub.input_width, FALLBACK_RANGE[1])
    else:
        lo, hi = (np.broadcast_to(np.asarray(a, dtype=np.float64), (sub.input_width,)) for a in r)
    return rng.uniform(lo, hi, size=(n, sub.input_width))


def probe_subnet(sub: MonotoneSubnet, n_probes: int, deltas: Sequence[float], rng: np.random.Generator,
                 subnet_index: int = 0, ranges=None, tolerance: float = PROBE_TOLERANCE,
                 max_recorded: int = 1000) -> ProbeReport:
    """Probe one monotone block.

    Each probe draws a block input ``h`` and, for every delta:

    * moves one coordinate ``i`` of ``h`` by +delta with the rest fixed and
      requires every output ``j`` to move in direction ``sign(alpha_i)*sign(beta_j)``;
    * picks one monotone layer and one of its input coordinates, moves that
      coordinate by +delta and requires the layer's pre-activations not to
      decrease (layer-local check of the positive-weight constraint).
    """
    signs = sub.signs().entries.astype(np.float64)
    h = _sample_inputs(sub, n_probes, rng, ranges)
    coord = rng.integers(0, sub.input_width, size=n_probes)
    n_layers = len(sub.block.monotone)
    layer_pos = rng.integers(0, n_layers, size=n_probes)
    stages = sub.stages(h)
    base_out = sub.finish(stages[-1])
    widths = [s.shape[1] for s in stages[:-1]]
    layer_coord = np.array([rng.integers(0, widths[p]) for p in layer_pos], dtype=np.int64)
    report = ProbeReport(probes_run=n_probes * len(deltas))
    rows = np.arange(n_probes)

    def record(mask_vals, stage_name, points, coords, d, expected):
        # mask_vals: n x m array of (observed * expected sign)
        bad_r, bad_c = np.nonzero(mask_vals < -tolerance)
        if len(bad_r):
            report.max_violation_magnitude = max(report.max_violation_magnitude,
                                                 float(-mask_vals[bad_r, bad_c].min()))
        for r, c in zip(bad_r, bad_c):
            if len(report.violations) >= max_recorded:
                break
            sgn = int(expected[r, c])
            report.violations.append(Violation(
                subnet_index, stage_name if isinstance(stage_name, str) else stage_name[r],
                points[r].tolist(), int(coords[r]), int(c), float(d),
                float(mask_vals[r, c] * sgn), sgn))
        return len(bad_r)

    for d in deltas:
        if not d > 0:
            raise ContractError(f"probe deltas must be positive, got {d}")
        # end-to-end: interpretable coordinate -> outputs
        hp = h.copy()
        hp[rows, coord] += d
        diff = sub(hp) - base_out
        expected = signs[coord]
        scored = diff * expected
        record(scored, "output", h, coord, d, expected)
        report.sign_disagreements += int(np.sum((diff != 0) & (np.sign(diff) != expected)))
        # layer-local: one coordinate of one monotone layer's input
        n_bad = 0
        for p in range(n_layers):
            sel = np.flatnonzero(layer_pos == p)
            if not len(sel):
                continue
            z = stages[p][sel]
            zp = z.copy()
            zp[np.arange(len(sel)), layer_coord[sel]] += d
            dz = _pre_activation(sub, p, zp) - _pre_activation(sub, p, z)
            n_bad += record(dz, f"layer {sub.block.monotone[p]}", z, layer_coord[sel], d, np.ones_like(dz))
    return report


def probe_monotonicity(model: Model, n_probes: int, deltas: Sequence[float] = DEFAULT_DELTAS,
                       seed: int = 0, ranges=None, tolerance: float = PROBE_TOLERANCE) -> ProbeReport:
    """Probe every monotone block of ``model``; see ``probe_subnet``.

    ``ranges`` optionally overrides the sampling box (lo, hi) for a single-block
    model; otherwise the per-unit activation ranges recorded during training
    are used.
    """
    if n_probes < 1:
        raise ContractError("n_probes must be >= 1")
    deltas = list(deltas)
    if not deltas or any(not d > 0 for d in deltas):
        raise ContractError(f"probe deltas must be positive, got {deltas}")
    rng = np.random.default_rng(seed)
    total = ProbeReport(0)
    for k, sub in enumerate(model.subnets()):
        r = probe_subnet(sub, n_probes, deltas, rng, k, ranges if len(model.blocks) == 1 else None, tolerance)
        total.probes_run += r.probes_run
        total.violations += r.violations
        total.sign_disagreements += r.sign_disagreements
        total.max_violation_magnitude = max(total.max_violation_magnitude, r.max_violation_magnitude)
    return total


@dataclass
class GradientCheckResult:
    max_relative_error: float
    compared: int
    excluded_points: int


KINK_MARGIN = 1e-3
REL_FLOOR = 1e-6


def _kink_free(model: Model, x: np.ndarray, margin: float) -> np.ndarray:
    """Mask of samples whose relu / max-pool decisions are stable under tiny parameter moves."""
    keep = np.ones(len(x), dtype=bool)
    h = x
    for i, s in enumerate(model.specs):
        pre = None
        if s.kind == "conv":
            pre = np.asarray(T.conv2d(h, model.params[f"{i}.K"], model.params[f"{i}.b"], stride=s.stride))
        elif s.kind in ("free_dense", "monotone_dense"):
            w = model.params[f"{i}.W"] if s.kind == "free_dense" or s.parametrization == "raw" \
                else effective_weight(model, i)
            pre = h @ w + model.params[f"{i}.b"]
        if pre is not None and s.activation == "relu":
            keep &= np.all(np.abs(pre.reshape(len(x), -1)) > margin, axis=1)
        if s.kind == "maxpool":
            flat = h.reshape(h.shape[0], h.shape[1], -1)
            top2 = -np.partition(-flat, 1, axis=2)[:, :, :2]
            keep &= np.all(top2[:, :, 0] - top2[:, :, 1] > margin, axis=1)
        h = np.asarray(run_layers(model, h, i, i + 1))
    return keep


def model_loss(model: Model, x: np.ndarray, y: np.ndarray) -> float:
    tape = T.Tape()
    logits, _, _ = forward_tape(model, tape, x)
    return float(np.asarray(loss(logits, y, loss_kind_for(model)).value))


def gradient_check(model: Model, n_points: int, seed: int = 0, step: float = 1e-5,
                   kink_margin: float = KINK_MARGIN, rel_floor: float = REL_FLOOR) -> GradientCheckResult:
    """Compare tape gradients with central differences on random inputs and labels.

    Samples sitting within ``kink_margin`` of a relu kink or a max-pool tie
    are dropped before comparing (the loss is not differentiable there).
    The relative error of each entry is |a - n| / max(|a|, |n|, rel_floor).
    """
    if n_points < 1:
        raise ContractError("n_points must be >= 1")
    rng = np.random.default_rng(seed)
    if model.is_convolutional:
        x = rng.uniform(0.0, 1.0, size=(n_points,) + model.input_shape)
    else:
        x = rng.uniform(-1.0, 1.0, size=(n_points, model.input_dim))
    n_cls = 2 if model.output_width == 1 else model.output_width
    y = rng.integers(0, n_cls, size=n_points)
    keep = _kink_free(model, x, kink_margin)
    excluded = int((~keep).sum())
    x, y = x[keep], y[keep]
    if len(x) == 0:
        return GradientCheckResult(0.0, 0, excluded)
    tape = T.Tape()
    logits, _, _ = forward_tape(model, tape, x)
    analytic = T.gradients(tape, loss(logits, y, loss_kind_for(model)))
    worst, compared = 0.0, 0
    for name, g in analytic.items():
        p = model.params[name]
        orig = p.copy()
        for idx in np.ndindex(p.shape):
            p[idx] = orig[idx] + step
            up = model_loss(model, x, y)
            p[idx] = orig[idx] - step
            down = model_loss(model, x, y)
            p[idx] = orig[idx]
            num = (up - down) / (2 * step)
            a = float(g[idx])
            err = abs(a - num) / max(abs(a), abs(num), rel_floor)
            worst = max(worst, err)
            compared += 1
        model.params[name] = orig
    return GradientCheckResult(worst, compared, excluded)
