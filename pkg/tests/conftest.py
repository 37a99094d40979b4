import time

import numpy as np
import pytest

_LINES = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_LINES] = []


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


class Criterion:
    """Times a block, collects named checks and records one PASS/FAIL line."""

    def __init__(self, lines: list, number: int, title: str, budget: float):
        self.lines, self.number, self.title, self.budget = lines, number, title, budget
        self.notes: list[str] = []
        self.failures: list[str] = []

    def check(self, ok: bool, note: str) -> None:
        self.notes.append(note)
        if not ok:
            self.failures.append(note)

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        elapsed = time.perf_counter() - self.t0
        if exc_type is not None:
            self.failures.append(f"{exc_type.__name__}: {exc}")
        if elapsed > self.budget:
            self.failures.append(f"runtime {elapsed:.1f}s over budget")
        status = "FAIL" if self.failures else "PASS"
        shown = self.failures if self.failures else self.notes
        line = (f"criterion {self.number:2d} {status}  {self.title} "
                f"[{elapsed:.2f}s of {self.budget:g}s]  " + "; ".join(shown))
        self.lines.append(line)
        print(line)
        if exc_type is None and self.failures:
            raise AssertionError(line)
        return False


@pytest.fixture
def criterion(request):
    lines = request.config.stash[_LINES]
    return lambda number, title, budget: Criterion(lines, number, title, budget)
