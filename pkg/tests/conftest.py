import numpy as np
import pytest

from ffkit.synthetic import plane_scene, room_scenes, sphere_scene

_criteria: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number and title")
    config.addinivalue_line("markers", "slow: takes more than a few seconds")


def pytest_runtest_logreport(report):
    marker = report.__dict__.get("criterion")
    if marker is None:
        return
    n, title = marker
    entry = _criteria.setdefault(n, {"title": title, "ok": True, "seen": False})
    if report.when == "call" or report.failed:
        entry["seen"] = True
        entry["ok"] &= not report.failed


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    m = item.get_closest_marker("criterion")
    if m is not None:
        rep.__dict__["criterion"] = (m.args[0], m.args[1])


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        e = _criteria[n]
        status = "PASS" if e["ok"] and e["seen"] else "FAIL"
        terminalreporter.write_line(f"criterion {n:2d} {status}: {e['title']}")


@pytest.fixture(scope="session")
def plane():
    return plane_scene((16, 16, 16), height=7.3)


@pytest.fixture(scope="session")
def sphere():
    return sphere_scene(10.0)


@pytest.fixture(scope="session")
def room():
    return room_scenes(1, seed=3)[0]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
