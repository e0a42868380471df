import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("mmkf", deadline=None, max_examples=60)
settings.load_profile("mmkf")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_spd(rng, n, floor=0.1):
    A = rng.standard_normal((n, n))
    return A @ A.T + floor * np.eye(n)


CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    number, title = props["criterion"]
    entry = CRITERIA.setdefault(number, {"title": title, "outcomes": []})
    entry["outcomes"].append((report.nodeid.split("::")[-1], report.outcome))
    if report.when == "call" and report.capstdout:
        entry.setdefault("output", []).extend(report.capstdout.strip().splitlines())


@pytest.fixture(autouse=True)
def _criterion_property(request, record_property):
    marker = request.node.get_closest_marker("criterion")
    if marker is not None:
        record_property("criterion", tuple(marker.args))


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(CRITERIA):
        entry = CRITERIA[number]
        outcomes = [o for _, o in entry["outcomes"]]
        if "failed" in outcomes:
            status = "FAIL"
        elif outcomes and all(o == "skipped" for o in outcomes):
            status = "SKIP"
        else:
            status = "PASS"
        notes = ", ".join(f"{name}={o}" for name, o in entry["outcomes"] if o != "passed")
        line = f"criterion {number:2d} {status}  {entry['title']}"
        terminalreporter.write_line(line + (f"  ({notes})" if notes else ""))
        for text in entry.get("output", []):
            terminalreporter.write_line(f"    {text}")
