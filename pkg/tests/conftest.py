import numpy as np
import pytest

from deeprisk.synth import SynthSpec, generate_panel


@pytest.fixture(scope="session")
def small_synth():
    """A 40-stock, 160-date synthetic panel with its ground truth."""
    return generate_panel(SynthSpec(n_stocks=40, n_dates=160, n_features=6, n_factors=3, seed=11))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def standardized(rng, N, K):
    """Columns with equal-weight zero mean and population std 1 (so ||f||^2 = N)."""
    F = rng.standard_normal((N, K))
    F -= F.mean(axis=0)
    return F / F.std(axis=0)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
