import os
import sys

sys.path.insert(0, os.path.dirname(__file__))

import pytest  # noqa: E402
from hypothesis import settings  # noqa: E402

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")

# acceptance tests append one PASS/FAIL line each; printed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


def pytest_collection_modifyitems(config, items):
    if os.environ.get("MEDFX_HEAVY") == "1":
        return
    skip = pytest.mark.skip(reason="full-size run; set MEDFX_HEAVY=1")
    for item in items:
        if "heavy" in item.keywords:
            item.add_marker(skip)
