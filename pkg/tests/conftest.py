import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_LINES = pytest.StashKey[list]()


class Criterion:
    """Collects the checks of one acceptance criterion and reports a single PASS/FAIL line."""

    def __init__(self, label: str, sink: list):
        self.label = label
        self.checks: list[tuple[str, bool, str]] = []
        self._sink = sink

    def check(self, name: str, ok, detail: str = "") -> bool:
        self.checks.append((name, bool(ok), detail))
        return bool(ok)

    @property
    def ok(self) -> bool:
        return bool(self.checks) and all(ok for _, ok, _ in self.checks)

    def line(self, error: str | None = None) -> str:
        parts = [f"{name}={'ok' if ok else 'FAILED'} ({detail})" if detail else f"{name}={'ok' if ok else 'FAILED'}"
                 for name, ok, detail in self.checks]
        if error:
            parts.append(f"error: {error}")
        status = "PASS" if self.ok and error is None else "FAIL"
        return f"{status} {self.label}: " + "; ".join(parts)

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        line = self.line(None if exc is None else f"{exc_type.__name__}: {exc}")
        print(line)
        self._sink.append(line)
        if exc is None and not self.ok:
            raise AssertionError(line)
        return False


def pytest_configure(config):
    config.stash[_LINES] = []


@pytest.fixture
def criterion(request):
    return lambda label: Criterion(label, request.config.stash[_LINES])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
