"""Shared pytest wiring: collects acceptance-criterion verdict lines and
prints them in the terminal summary, where capture cannot swallow them."""

import pytest


def pytest_configure(config):
    config._criterion_verdicts = []


@pytest.fixture
def criterion_verdict(request):
    """Record a one-line PASS/FAIL verdict for the run summary."""

    def record(line):
        request.config._criterion_verdicts.append(line)
        print(line, flush=True)

    return record


def pytest_terminal_summary(terminalreporter):
    verdicts = getattr(terminalreporter.config, "_criterion_verdicts", [])
    if verdicts:
        terminalreporter.section("acceptance criteria")
        for line in verdicts:
            terminalreporter.write_line(line)
