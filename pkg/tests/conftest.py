import numpy as np
import pytest

from mononet.dataio import Dataset
from mononet.model import build_mononet, mononet_spec


def toy_binary(n=200, d=5, seed=0, name="toy"):
    rng = np.random.default_rng(seed)
    x = rng.integers(0, 2, size=(n, d)).astype(float)
    y = (x[:, 0] + x[:, 1] - x[:, 2] + rng.normal(0, 0.5, n) > 0.5).astype(int)
    return Dataset(x, y, tuple(f"f{i}" for i in range(d)), name)


@pytest.fixture
def toy():
    return toy_binary()


@pytest.fixture
def small_model():
    return build_mononet(mononet_spec([6], 3, [5]), 4, seed=1)


def pytest_addoption(parser):
    parser.addoption("--fast", action="store_true", default=False,
                     help="acceptance: hierarchical MNIST on a 10k-sample subset")


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
