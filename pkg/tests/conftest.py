import numpy as np
import pytest

from uavho.channel import BasestationSite
from uavho.env import Scenario

ACCEPTANCE_RESULTS = []


def record(number, name, passed, detail="", soft=False):
    ACCEPTANCE_RESULTS.append((number, name, "SOFT" if soft else ("PASS" if passed else "FAIL"),
                               detail))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, name, status, detail in sorted(ACCEPTANCE_RESULTS, key=lambda r: r[0]):
        terminalreporter.write_line(f"[{status}] {number:>2}. {name}  {detail}")


@pytest.fixture
def scenario():
    return Scenario()


@pytest.fixture
def four_bs_scenario():
    sites = [BasestationSite(i, (x, y, 25.0)) for i, (x, y) in
             enumerate([(500, 500), (1500, 500), (500, 1500), (1500, 1500)])]
    return Scenario(bs_sites=sites)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
