import numpy as np
import pytest

from docrl.synth import FeatureLayout, Vocabulary, gen_dataset, make_vocabulary

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def vocab():
    return make_vocabulary(0)


@pytest.fixture(scope="session")
def layout(vocab):
    return FeatureLayout(vocab)


@pytest.fixture(scope="session")
def small_dataset():
    return gen_dataset(50, seed=3)


@pytest.fixture
def tiny_layout():
    """A small feature space so finite differences stay cheap."""
    vocab = Vocabulary(keys=("a", "b"), values=("x", "y", "z"), descriptors=("d1", "d2"))
    return FeatureLayout(vocab, bins=4)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
