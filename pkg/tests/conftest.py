from __future__ import annotations

import pytest
from hypothesis import settings

from rltqap.model import load_instance, random_instance
from rltqap.optima import bundled_path

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")

_ACCEPTANCE: list[tuple[str, str, str]] = []


@pytest.fixture(scope="session")
def nug12():
    return load_instance(bundled_path("nug12.dat"))


@pytest.fixture
def n2_instance():
    from rltqap.model import parse_qaplib

    return parse_qaplib("2  0 3  3 0  0 5  5 0", name="toy2")


@pytest.fixture
def rand6():
    return random_instance(6, seed=11)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    setattr(item, f"rep_{rep.when}", rep)


class Criterion:
    def __init__(self):
        self.name = None
        self.details: list[str] = []

    def __call__(self, name: str):
        self.name = name
        return self

    def note(self, text: str):
        print(text)
        self.details.append(text)


@pytest.fixture
def criterion(request):
    """Records one pass/fail line per acceptance criterion for the terminal summary."""
    c = Criterion()
    yield c
    rep = getattr(request.node, "rep_call", None)
    status = "PASS" if rep is not None and rep.passed else "FAIL"
    _ACCEPTANCE.append((status, c.name or request.node.name, "; ".join(c.details)))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for status, name, detail in _ACCEPTANCE:
        terminalreporter.write_line(f"[{status}] {name}" + (f" :: {detail}" if detail else ""))
