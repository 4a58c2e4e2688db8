import os
import sys

import matplotlib

matplotlib.use("Agg")

sys.path.insert(0, os.path.dirname(__file__))

import _acceptance  # noqa: E402


def pytest_terminal_summary(terminalreporter):
    if not _acceptance.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for text in _acceptance.lines():
        terminalreporter.write_line(text)
