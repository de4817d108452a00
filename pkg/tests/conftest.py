import numpy as np
import pytest
from hypothesis import strategies as st

from modp.dataset import ResponseMatrix
from modp.model import MultiBladeModel


def starts_from_sizes(sizes):
    return tuple(int(x) for x in np.concatenate([[0], np.cumsum(sizes)]))


def random_matrix(rng, sizes, n_rows):
    bs = starts_from_sizes(sizes)
    data = np.zeros((n_rows, bs[-1]), dtype=np.uint8)
    for s, k in zip(bs[:-1], sizes):
        data[np.arange(n_rows), s + rng.integers(0, k, n_rows)] = 1
    return ResponseMatrix(data, bs)


def random_model(rng, sizes, blades=2, features=3, scale=1.0):
    """Model with nontrivial random parameters (not just the small init)."""
    model = MultiBladeModel.initialize(starts_from_sizes(sizes), blades, features,
                                       seed=int(rng.integers(1 << 31)))
    for p in model.parameters():
        p[...] = rng.normal(0.0, scale, p.shape)
    model.apply_mask()
    return model


block_sizes = st.lists(st.integers(2, 5), min_size=1, max_size=5)


# one line per acceptance criterion, printed after the run
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
