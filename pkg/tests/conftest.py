import numpy as np
import pytest

from linbrdf.brdf import BasisSet, Lobe, SyntheticBrdfSpec, synthesize
from linbrdf.render import SphereGeometry


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def small_basis():
    """Six smooth materials on an 8x8x8 table (18 columns)."""
    specs = [
        SyntheticBrdfSpec((0.8, 0.5, 0.2)),
        SyntheticBrdfSpec((0.2, 0.6, 0.3), (Lobe((0.1, 0.1, 0.1), 20.0),)),
        SyntheticBrdfSpec((0.1, 0.1, 0.4), (Lobe((0.2, 0.2, 0.2), 60.0),)),
        SyntheticBrdfSpec((0.02, 0.02, 0.02), (Lobe((0.6, 0.5, 0.3), 300.0),)),
        SyntheticBrdfSpec((0.5, 0.5, 0.5), (Lobe((0.05, 0.05, 0.05), 5.0),)),
        SyntheticBrdfSpec((0.0, 0.01, 0.0), (Lobe((0.9, 0.9, 0.9), 150.0), Lobe((0.05, 0.05, 0.05), 10.0))),
    ]
    return BasisSet.from_materials((f"m{i}", synthesize(s, (8, 8, 8))) for i, s in enumerate(specs))


@pytest.fixture(scope="session")
def small_geometry():
    return SphereGeometry(24)


# One PASS/FAIL line per acceptance criterion at the end of the run.  Tests
# name their criterion with ``@pytest.mark.acceptance(n)`` and may attach
# measured values through ``record_property``.
_CRITERIA = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or not marker.args:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        title = (item.function.__doc__ or item.name).strip().splitlines()[0]
        status = "SKIP" if report.skipped else ("PASS" if report.passed else "FAIL")
        details = ", ".join(f"{k}={v}" for k, v in item.user_properties)
        _CRITERIA[marker.args[0]] = (status, title, details)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        status, title, details = _CRITERIA[n]
        line = f"criterion {n}: {status} - {title}"
        terminalreporter.write_line(line + (f" [{details}]" if details else ""))
