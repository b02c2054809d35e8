"""Shared fixtures and the acceptance-criteria report hook."""

import numpy as np
import pytest

from nvratchet import model

# filled by tests/test_acceptance.py; printed once at the end of the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def cluster3():
    """Default 3-spin cluster (NV, P1 proxy, proton)."""
    return model.make_cluster()


@pytest.fixture
def rng():
    return np.random.default_rng(20250823)


@pytest.fixture
def out_root(tmp_path, monkeypatch):
    """Point the dataset output root into a temp dir."""
    root = tmp_path / "out"
    monkeypatch.setenv("NVRATCHET_OUT", str(root))
    return root


def random_density_matrix(rng, dim):
    """Random full-rank mixed state."""
    a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    rho = a @ a.conj().T
    return rho / np.trace(rho).real
