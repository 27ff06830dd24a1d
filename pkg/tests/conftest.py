import numpy as np
import pytest

from betadarts.autograd import finite_difference


def grad_close(auto, numeric, rtol=1e-5, atol=1e-7, small=1e-3):
    """Relative check, switching to absolute where the true gradient is small."""
    auto, numeric = np.asarray(auto), np.asarray(numeric)
    big = np.abs(numeric) >= small
    rel = np.abs(auto - numeric) / np.maximum(np.abs(numeric), 1e-300)
    return bool(np.all(rel[big] < rtol) and np.all(np.abs(auto - numeric)[~big] < atol))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def fd():
    return finite_difference


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    report = getattr(mod, "REPORT", None)
    if report:
        terminalreporter.section("acceptance criteria")
        for n in sorted(report):
            terminalreporter.write_line(report[n])
