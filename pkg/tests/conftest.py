import sys

import numpy as np
import pytest

from letnet.sensing import build_sensing_model, generate_dataset


@pytest.fixture
def small_model():
    return build_sensing_model(22, 32, 3)


@pytest.fixture
def small_split(small_model):
    return generate_dataset(small_model, 0.2, 20.0, (1, 0, 0), 5).split("train")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for key in sorted(lines, key=lambda k: int(k[1:])):
            terminalreporter.write_line(lines[key])
