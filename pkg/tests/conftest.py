import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def nprng():
    # only for generating test inputs; the package itself never uses numpy's RNG
    return np.random.default_rng(1234)


# -- acceptance reporting ------------------------------------------------------
# Tests tagged @pytest.mark.criterion(n, "title") are summarised as one
# PASS/FAIL line per criterion at the end of the session.

_criteria: dict[int, list] = {}


def pytest_runtest_makereport(item, call):
    mark = item.get_closest_marker("criterion")
    if mark is None or call.when != "call" and not (call.when == "setup" and call.excinfo):
        return
    n, title = mark.args
    entry = _criteria.setdefault(n, [title, True])
    entry[1] = entry[1] and call.excinfo is None


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        title, ok = _criteria[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {title}")
