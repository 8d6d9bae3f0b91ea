import numpy as np
import pytest

from resyn.datamodel import TOY
from resyn.segmentation import SegTrainConfig, train_toy_segmenter
from resyn.toyworld import ToySceneConfig, generate_split

# Filled by tests/test_acceptance.py; printed in the terminal summary.
ACCEPTANCE_LINES: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])


@pytest.fixture(scope="session")
def toy_split():
    return generate_split(ToySceneConfig(), 100, 12, seed=123)


@pytest.fixture(scope="session")
def toy_segmenter(toy_split):
    train, _ = toy_split
    seg, _ = train_toy_segmenter(train, TOY, SegTrainConfig(dropout=0.5, seed=0))
    return seg


@pytest.fixture
def rng():
    return np.random.default_rng(0)
