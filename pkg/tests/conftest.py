import re
from pathlib import Path

import pytest

DATA_DIR = Path(__file__).parent / "data"

_CRITERION = re.compile(r"test_criterion_(\d+)[a-z]?_?(.*)")
_results: dict[str, str] = {}


@pytest.fixture(scope="session")
def data_dir() -> Path:
    return DATA_DIR


@pytest.fixture(scope="session")
def golden_dir() -> Path:
    return DATA_DIR / "golden"


def pytest_runtest_logreport(report):
    match = _CRITERION.match(report.nodeid.split("::")[-1])
    if not match:
        return
    key = report.nodeid.split("::")[-1].replace("test_criterion_", "")
    if report.when == "call":
        _results[key] = "PASS" if report.passed else "FAIL"
    elif report.when == "setup" and report.skipped:
        _results[key] = "SKIP"
    elif report.when == "setup" and report.failed:
        _results[key] = "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for key in sorted(_results, key=lambda k: (int(re.match(r"(\d+)", k).group(1)), k)):
        terminalreporter.write_line(f"criterion {key.replace('_', ' ')}: {_results[key]}")
