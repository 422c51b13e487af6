import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

# Acceptance outcomes, filled by tests/test_acceptance.py: key -> (status, title, detail).
ACCEPTANCE: dict[str, tuple[str, str, str]] = {}


def pytest_addoption(parser):
    parser.addoption("--run-slow", action="store_true", default=False, help="run full-scale training runs")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--run-slow"):
        return
    skip = pytest.mark.skip(reason="full-scale run; enable with --run-slow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: (int(k.rstrip("ab")), k)):
        status, title, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"[{status}] {key:>3}. {title}: {detail}")
