import numpy as np
import pytest

from spiraldeblur.core import make_rng
from spiraldeblur.trajectory import LONG_READOUT, SHORT_READOUT, make_spiral
from spiraldeblur.transform import build_plan, pipe_menon_density


def random_image(rng, n, m=None):
    m = n if m is None else m
    return rng.standard_normal((n, m)) + 1j * rng.standard_normal((n, m))


def rel_err(a, b):
    return np.linalg.norm(np.ravel(a) - np.ravel(b)) / np.linalg.norm(np.ravel(b))


@pytest.fixture
def rng():
    return make_rng(1234)


@pytest.fixture(scope="session")
def small_traj():
    """A 16x16 protocol with few samples, for brute-force oracles."""
    return make_spiral(16, 1.0e-3, 1.0e-5, 4)


@pytest.fixture(scope="session")
def short_protocol():
    traj = make_spiral(84, SHORT_READOUT)
    plan = build_plan(traj)
    return traj, plan, pipe_menon_density(traj, plan, iters=50)


@pytest.fixture(scope="session")
def long_protocol():
    traj = make_spiral(84, LONG_READOUT)
    plan = build_plan(traj)
    return traj, plan, pipe_menon_density(traj, plan, iters=50)


# acceptance verdicts, one line per criterion, echoed again after the run
ACCEPTANCE = {}


@pytest.fixture
def verdict(request):
    reporter = request.config.pluginmanager.getplugin("terminalreporter")

    def record(number, title, ok, detail=""):
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}: {title} -- {detail}"
        ACCEPTANCE[number] = line
        if reporter is not None:
            reporter.write_line(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
