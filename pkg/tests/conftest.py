from __future__ import annotations

import pytest

_CRITERIA: list[str] = []


class _Recorder:
    def __init__(self, number: int, title: str):
        self.number, self.title = number, title
        self.checks: list[tuple[str, bool]] = []

    def check(self, label: str, ok: bool) -> bool:
        self.checks.append((label, bool(ok)))
        return bool(ok)

    @property
    def ok(self) -> bool:
        return bool(self.checks) and all(ok for _, ok in self.checks)

    def line(self) -> str:
        failed = [label for label, ok in self.checks if not ok]
        status = "PASS" if self.ok else "FAIL"
        detail = "; ".join(label for label, _ in self.checks) if self.ok else "failed: " + "; ".join(failed)
        return f"criterion {self.number:2d} {status}  {self.title}  [{detail}]"


@pytest.fixture
def criterion(request):
    """Collects the sub-checks of one acceptance criterion and prints a single verdict line."""
    marker = request.node.get_closest_marker("criterion")
    rec = _Recorder(*marker.args)
    yield rec
    line = rec.line()
    _CRITERIA.append(line)
    print("\n" + line)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_CRITERIA):
            terminalreporter.write_line(line)
