import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")
    config._criteria = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when != "call":
        return
    detail = "; ".join(v for k, v in item.user_properties if k == "detail")
    item.config._criteria.append((mark.args[0], rep.passed, detail))


def pytest_terminal_summary(terminalreporter, config):
    if not config._criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n, ok, detail in sorted(config._criteria):
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
