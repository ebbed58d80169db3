import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mononet import model as M
from mononet.errors import DimensionError, FormatError, SpecError, UnsupportedVersionError
from mononet.model import LayerSpec, free, monotone, scale


def unit_model(alpha=1.0, beta=1.0, v=0.0, output_activation="identity"):
    specs = [free(1, "identity"), scale(1), monotone(1, "identity"), scale(1, output_activation)]
    params = {"0.W": np.array([[1.0]]), "0.b": np.zeros(1), "1.scale": np.array([alpha]),
              "2.V": np.array([[v]]), "2.b": np.zeros(1), "3.scale": np.array([beta])}
    return M.Model(specs, (1,), params)


def test_table1_architecture_shape():
    m = M.build_mononet(M.mononet_spec([64, 64], 3, [64]), 36, seed=0)
    assert m.interpretable_width == 3
    assert m.output_width == 1
    assert m.input_dim == 36
    logits, h = M.forward(m, np.zeros((5, 36)))
    assert logits.shape == (5, 1) and h.shape == (5, 3)


def test_spec_string_matches_builder():
    assert M.parse_spec_string("64,64,3,64") == M.mononet_spec([64, 64], 3, [64])
    assert M.parse_spec_string("8,8*,2") == M.mononet_spec([8], 8, [2])


def test_adjacent_scale_layers_rejected():
    specs = [free(4), scale(4), scale(4), monotone(1), scale(1)]
    with pytest.raises(SpecError, match="layer 2"):
        M.build_mononet(specs, 3, 0)


@pytest.mark.parametrize("specs, index", [
    ([scale(3), monotone(1), scale(1)], 0),
    ([free(3), monotone(1), scale(1)], 1),
    ([free(3), scale(3), monotone(1)], 2),
    ([free(3), scale(2), monotone(1), scale(1)], 1),
    ([free(3), scale(3), monotone(1), scale(1, "tanh")], 3),
])
def test_malformed_stacks_name_the_layer(specs, index):
    with pytest.raises(SpecError) as err:
        M.build_mononet(specs, 3, 0)
    assert err.value.index == index


def test_same_seed_same_parameters():
    a = M.build_mononet(M.mononet_spec([8], 3, [4]), 5, seed=3)
    b = M.build_mononet(M.mononet_spec([8], 3, [4]), 5, seed=3)
    assert a.params.keys() == b.params.keys()
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)


def test_forward_examples():
    assert np.asarray(M.forward(unit_model(), [[2.0]])[0]).tolist() == [[2.0]]
    assert np.asarray(M.forward(unit_model(beta=-1.0), [[2.0]])[0]).tolist() == [[-2.0]]


def test_forward_width_mismatch():
    m = M.build_mononet(M.mononet_spec([4], 2, [3]), 5, 0)
    with pytest.raises(DimensionError):
        M.forward(m, np.zeros((2, 4)))


def test_sign_matrix_examples():
    m = M.build_mononet(M.mononet_spec([4], 2, [3]), 2, 0)
    m.params[f"{m.blocks[0].alpha}.scale"] = np.array([1.0, -1.0])
    m.params[f"{m.blocks[0].beta}.scale"] = np.array([1.0])
    assert M.monotone_signs(m).tolist() == [[1], [-1]]
    u = unit_model(alpha=-2.0, beta=-3.0)
    assert M.monotone_signs(u).tolist() == [[1]]
    assert M.monotone_signs(u)(0, 0) == 1


def test_scales_initialised_away_from_zero():
    for seed in range(20):
        m = M.build_mononet(M.mononet_spec([4], 5, [3]), 2, seed)
        assert np.all(np.abs(m.alpha) >= M.SCALE_FLOOR) and np.all(np.abs(m.beta) >= M.SCALE_FLOOR)
        assert np.all(np.abs(np.abs(m.alpha) - 1) < 0.1)


def test_clamp_scale():
    out = M.clamp_scale(np.array([0.0, 1e-9, -1e-9, 0.5, -2.0]))
    assert out.tolist() == [1e-6, 1e-6, -1e-6, 0.5, -2.0]


def _probe_logits(m, x, i, delta):
    sub = m.subnets()[0]
    h = np.asarray(M.forward(m, x)[1])
    hp = h.copy()
    hp[:, i] += delta
    return sub(h), sub(hp)


@pytest.mark.parametrize("depth", [1, 2, 3])
@pytest.mark.parametrize("out_act", ["identity", "sigmoid"])
def test_probe_property_for_stacked_layers(depth, out_act):
    rng = np.random.default_rng(depth)
    m = M.build_mononet(M.mononet_spec([6], 3, [5] * (depth - 1), 2, output_activation=out_act), 4, seed=depth)
    signs = M.monotone_signs(m).entries
    x = rng.normal(size=(200, 4))
    for i in range(3):
        base, moved = _probe_logits(m, x, i, 0.5)
        diff = moved - base
        assert np.all(diff * signs[i] >= -1e-12)
        # sigmoid is strictly increasing: probabilities move the same way as logits
        pdiff = 1 / (1 + np.exp(-moved)) - 1 / (1 + np.exp(-base))
        assert np.all(pdiff * signs[i] >= -1e-12)


def test_output_applies_sigmoid():
    m = unit_model(output_activation="sigmoid")
    assert M.output(m, [[0.0]]).tolist() == [[0.5]]
    assert M.predict_proba(m, [[0.0]]).tolist() == [0.5]


def test_effective_weights_strictly_positive():
    m = M.build_mononet(M.mononet_spec([4], 3, [8, 8]), 2, 0)
    for i in m.monotone_slots():
        idx = int(i.split(".")[0])
        assert np.all(M.effective_weight(m, idx) > 0)
    m.params[m.monotone_slots()[0]][...] = -700.0
    assert np.all(M.effective_weight(m, int(m.monotone_slots()[0].split(".")[0])) > 0)


def test_serialization_round_trip_bitwise():
    m = M.build_mononet(M.mononet_spec([7, 5], 3, [4]), 6, seed=11)
    m.meta["note"] = "x"
    back = M.deserialize(M.serialize(m))
    assert back.specs == m.specs
    assert back.input_shape == m.input_shape
    assert back.meta == m.meta
    for k, v in m.params.items():
        assert back.params[k].tobytes() == v.tobytes()
    assert M.serialize(back) == M.serialize(m)


def test_save_and_load(tmp_path):
    m = M.build_mononet(M.mononet_spec([3], 2, [2]), 2, seed=0)
    M.save(m, tmp_path / "m.mnet")
    assert M.serialize(M.load(tmp_path / "m.mnet")) == M.serialize(m)


def test_corrupted_magic():
    data = bytearray(M.serialize(unit_model()))
    data[:4] = b"XXXX"
    with pytest.raises(FormatError, match="magic"):
        M.deserialize(bytes(data))


def test_previous_version_is_unsupported():
    data = bytearray(M.serialize(unit_model()))
    data[4:6] = struct.pack("<H", M.FORMAT_VERSION - 1)
    with pytest.raises(UnsupportedVersionError):
        M.deserialize(bytes(data))


@pytest.mark.parametrize("cut", [3, 8, 20, -1])
def test_truncation_is_a_format_error(cut):
    data = M.serialize(unit_model())
    with pytest.raises(FormatError):
        M.deserialize(data[:cut])


def test_trailing_bytes_rejected():
    with pytest.raises(FormatError):
        M.deserialize(M.serialize(unit_model()) + b"\0")


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31), st.lists(st.integers(1, 6), min_size=1, max_size=3),
       st.integers(1, 4), st.lists(st.integers(1, 6), max_size=2), st.integers(1, 3))
def test_random_models_round_trip(seed, free_w, k, mono_w, n_out):
    m = M.build_mononet(M.mononet_spec(free_w, k, mono_w, n_out), 3, seed)
    back = M.deserialize(M.serialize(m))
    x = np.random.default_rng(seed).normal(size=(4, 3))
    assert np.array_equal(np.asarray(M.forward(m, x)[0]), np.asarray(M.forward(back, x)[0]))


def test_layer_spec_kernel_normalised():
    assert LayerSpec("conv", 2, kernel=[3, 3]).kernel == (3, 3)
