import os
from pathlib import Path

import numpy as np
import pytest

from euyso.spin import FieldVector, load_model, solve

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"
DATA = ROOT / "data"

# criterion lines collected by test_acceptance, printed once at the end
ACCEPTANCE_LINES: list[str] = []


def literature_config() -> Path | None:
    """Tensor file with the published Hamiltonians, if one has been supplied."""
    env = os.environ.get("EUYSO_LITERATURE_CONFIG")
    for cand in (env, CONFIGS / "literature_model.json"):
        if cand and Path(cand).is_file():
            return Path(cand)
    return None


@pytest.fixture(scope="session")
def surrogate():
    return load_model(CONFIGS / "surrogate_model.json")


@pytest.fixture(scope="session")
def levels_d2(surrogate):
    return solve(surrogate, FieldVector(0.0, 230.0, 0.0))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)
