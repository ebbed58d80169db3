import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st
from scipy import stats

from mononet.dataio import Dataset
from mononet.errors import ContractError, UndefinedCorrelationError
from mononet.interpretation import (average_ranks, build_report, explain_unit, rank_samples, spearman,
                                    top_bottom_gaps)
from mononet.model import build_mononet, mononet_spec
from mononet.training import TrainConfig, train


def test_spearman_examples():
    assert spearman([1, 2, 3], [1, 2, 3]) == 1.0
    assert spearman([1, 2, 3], [3, 2, 1]) == -1.0
    with pytest.raises(UndefinedCorrelationError):
        spearman([1, 1, 1], [1, 2, 3])
    with pytest.raises(ContractError):
        spearman([1], [1])
    with pytest.raises(ContractError):
        spearman([1, 2], [1, 2, 3])


def test_average_ranks_with_ties():
    assert average_ranks([10, 20, 20, 5]).tolist() == [2.0, 3.5, 3.5, 1.0]


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 4)), min_size=3, max_size=60))
def test_spearman_matches_scipy(pairs):
    x, y = np.array(pairs).T
    assume(len(set(x)) > 1 and len(set(y)) > 1)
    assert spearman(x, y) == pytest.approx(stats.spearmanr(x, y).statistic, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(1, 1000), min_size=3, max_size=40, unique=True))
def test_spearman_invariances(values):
    x = np.array(values, dtype=float) / 10
    assert spearman(x, x ** 3) == pytest.approx(1.0)
    assert spearman(x, -x) == pytest.approx(-1.0)
    y = (x * 7) % 3
    assume(len(set(y)) > 1)
    assert spearman(x, y) == pytest.approx(spearman(np.log(x), y ** 3 + 2 * y), abs=1e-12)


def model_and_data(seed=0, n=60):
    rng = np.random.default_rng(seed)
    x = rng.integers(0, 2, size=(n, 4)).astype(float)
    y = (x[:, 0] > 0).astype(int)
    data = Dataset(x, y, ("a", "b", "c", "d"), "toy")
    return build_mononet(mononet_spec([5], 3, [4]), 4, seed), data


def test_rank_samples_examples():
    m, _ = model_and_data(n=3)
    d = Dataset(np.zeros((3, 4)), np.array([0, 1, 0]), ("a", "b", "c", "d"))
    h = np.array([[0.1], [0.9], [0.5]]) * np.ones((1, 3))
    assert rank_samples(m, d, 0, h).tolist() == [1, 2, 0]
    assert rank_samples(m, d, 1, np.zeros((3, 3))).tolist() == [0, 1, 2]
    with pytest.raises(ContractError):
        rank_samples(m, d, 3)


def test_rank_samples_is_a_permutation():
    m, d = model_and_data()
    for u in range(3):
        assert sorted(rank_samples(m, d, u).tolist()) == list(range(len(d)))


def test_gap_examples():
    x = np.array([[1, 5], [1, 5], [0, 5], [0, 5]], float)
    d = Dataset(x, np.array([0, 1, 0, 1]), ("present", "constant"))
    t = top_bottom_gaps(np.array([0, 1, 2, 3]), d, 0.5)
    assert t.n_each == 2
    assert t.gap.tolist() == [1.0, 0.0]
    with pytest.raises(ContractError):
        top_bottom_gaps(np.arange(4), d, 0.6)
    with pytest.raises(ContractError):
        top_bottom_gaps(np.arange(4), d, 0.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 50), st.floats(0.01, 0.5), st.integers(0, 10**6))
def test_gaps_match_brute_force(n, q, seed):
    rng = np.random.default_rng(seed)
    x = rng.integers(0, 2, size=(n, 3)).astype(float)
    d = Dataset(x, np.zeros(n, int), ("a", "b", "c"))
    ranking = rng.permutation(n)
    k = math.ceil(round(q * n, 9))
    t = top_bottom_gaps(ranking, d, q)
    for j in range(3):
        top = [x[i, j] for i in ranking[:k]]
        bottom = [x[i, j] for i in ranking[n - k:]]
        assert t.top_mean[j] == pytest.approx(sum(top) / k)
        assert t.bottom_mean[j] == pytest.approx(sum(bottom) / k)
        assert t.gap[j] == pytest.approx(abs(sum(top) / k - sum(bottom) / k))
        assert t.gap[j] >= 0


def test_largest_gap_ties_by_index():
    d = Dataset(np.array([[1, 1, 0], [0, 0, 0]], float), np.array([0, 1]), ("a", "b", "c"))
    assert top_bottom_gaps(np.array([0, 1]), d, 0.5).largest(3) == [0, 1, 2]


def test_report_structure_and_determinism():
    m, d = model_and_data()
    m, _ = train(m, d, TrainConfig(epochs=5))
    r1, r2 = build_report(m, d), build_report(m, d)
    assert r1.to_json() == r2.to_json()
    assert len(r1.units) == 3
    for u in r1.units:
        assert u.n_each == 6
        assert len(u.top_features) == 4
        gaps = [f.gap for f in u.top_features]
        assert gaps == sorted(gaps, reverse=True)
    assert "unit" in r1.to_table().splitlines()[0]
    with pytest.raises(ContractError):
        build_report(m, d, q=0.6)


def test_unit_sign_comes_from_sign_matrix():
    m, d = model_and_data()
    alpha = m.blocks[0].alpha
    m.params[f"{alpha}.scale"] = np.array([1.0, -1.0, 1.0])
    m.params[f"{m.blocks[0].beta}.scale"] = np.array([-1.0])
    e = explain_unit(m, d, 1)
    assert e.signs == [1] and e.correlation() == "positive"
    assert explain_unit(m, d, 0).correlation() == "negative"
