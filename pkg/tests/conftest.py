import json
import sys
from pathlib import Path

import numpy as np
import pytest

from medakv import _kernels
from medakv.model import ModelConfig

sys.path.insert(0, str(Path(__file__).parent))

FIXTURES = Path(__file__).parent / "fixtures"


def pytest_sessionstart(session):
    # compile numba kernels once so timed tests measure steady-state runtime
    _kernels.warmup()


@pytest.fixture(scope="session")
def golden():
    return json.loads((FIXTURES / "seed7.json").read_text())


@pytest.fixture(scope="session")
def cfg7():
    return ModelConfig(num_layers=2, num_heads=2, model_dim=8, seed=7)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
