import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from policyscope import kernels, synth  # noqa: E402

_acceptance_lines: list[str] = []


@pytest.fixture(params=kernels.available_backends())
def backend(request, monkeypatch):
    """Run the test once per kernel backend."""
    monkeypatch.setattr(kernels, "BACKEND", request.param)
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def swingup_states():
    return synth.generate_pendulum(controller="energy_pd", episodes=10, horizon=120, seed=3)


@pytest.fixture(scope="session")
def random_states():
    return synth.generate_pendulum(controller="random", episodes=40, horizon=50, seed=0)


def pytest_runtest_logreport(report):
    if report.when != "call" or "acceptance" not in report.keywords:
        return
    name = report.nodeid.split("::")[-1]
    status = "PASS" if report.passed else "FAIL"
    detail = dict(report.user_properties).get("detail", "")
    _acceptance_lines.append(f"{status}  {name}" + (f"  ({detail})" if detail else ""))


def pytest_terminal_summary(terminalreporter):
    if _acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in _acceptance_lines:
            terminalreporter.write_line(line)
