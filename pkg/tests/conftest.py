import functools

import numpy as np
import pytest

from ommpp import harness


@functools.lru_cache(maxsize=None)
def problem(test_id: str, ell: int, potential_seed: int = 0):
    """Shifted Hamiltonian and dense spectral data for a preset test."""
    cfg = harness.ExperimentConfig(test_id=test_id, ells=[ell], potential_seed=potential_seed)
    return harness.build_problem(cfg, ell)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_block(rng, n, m, complex_=True):
    X = rng.standard_normal((n, m))
    if complex_:
        X = X + 1j * rng.standard_normal((n, m))
    return X


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
