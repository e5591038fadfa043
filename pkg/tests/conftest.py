import numpy as np
import pytest

from irsvlc.channel import ChannelModel
from irsvlc.scene import default_scenario

CENTER = (2.5, 2.5, 1.0)


@pytest.fixture(scope="session")
def scenario():
    return default_scenario()


@pytest.fixture(scope="session")
def model(scenario):
    return ChannelModel(scenario)


@pytest.fixture(scope="session")
def tensor(scenario, model):
    return model.gain_tensor(scenario.user_positions())


@pytest.fixture(scope="session")
def center_tensor(model):
    return model.gain_tensor([CENTER])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance summary: one line per criterion ---------------------------------

_criteria = {}


def pytest_runtest_logreport(report):
    name = report.nodeid.rsplit("::", 1)[-1]
    if not name.startswith("test_criterion_"):
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        detail = dict(report.user_properties).get("detail", "")
        _criteria[name] = (report.outcome, detail)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_criteria):
        outcome, detail = _criteria[name]
        num = int(name.split("_")[2])
        label = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"criterion {num:2d}: {label}  {detail}")
