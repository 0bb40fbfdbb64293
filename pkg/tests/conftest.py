import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from heatcf import InitSpec, init_matrix
from heatcf.synth import make_clustered


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running training or bench test")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One PASS/FAIL/SKIP line per acceptance criterion."""
    lines = {}
    for status in ("passed", "failed", "skipped"):
        for report in terminalreporter.stats.get(status, []):
            if "test_acceptance.py" in report.nodeid and report.when in ("call", "setup"):
                name = report.nodeid.split("::")[-1]
                reason = ""
                if status == "skipped" and isinstance(report.longrepr, tuple):
                    reason = f"  ({report.longrepr[2].removeprefix('Skipped: ')})"
                lines[name] = f"{name}: {status.upper()}{reason}"
    if lines:
        terminalreporter.write_sep("-", "acceptance criteria")
        for name in sorted(lines):
            terminalreporter.write_line(lines[name])


@pytest.fixture(scope="session")
def clustered_small():
    """Small planted-cluster dataset: fast to train, recall well above chance."""
    return make_clustered(60, 240, 6, 24, seed=3)


@pytest.fixture(scope="session")
def clustered_medium():
    """Medium planted-cluster dataset for convergence-sensitive checks."""
    return make_clustered(800, 1600, 16, 40, affinity=0.97, seed=11)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_matrices():
    S = init_matrix(60, 16, InitSpec(seed=1))
    T = init_matrix(240, 16, InitSpec(seed=2))
    return S, T
