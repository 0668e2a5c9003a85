import os

# Finite-difference checks and exactness oracles need 64-bit arithmetic.
os.environ["UNWARP_PRECISION"] = "f64"

import numpy as np
import pytest


def pytest_addoption(parser: pytest.Parser) -> None:
    parser.addoption("--runslow",
                     action="store_true",
                     default=False,
                     help="Run long optimization checks.")


def pytest_collection_modifyitems(config: pytest.Config,
                                  items: list[pytest.Item]) -> None:
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def f32(monkeypatch: pytest.MonkeyPatch) -> None:
    '''Checkpoint blobs are float32; bit-exact comparisons run in f32.'''
    monkeypatch.setenv("UNWARP_PRECISION", "f32")
