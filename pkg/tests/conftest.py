from __future__ import annotations

import pytest
from hypothesis import HealthCheck, settings

from minimr import _backend

BACKENDS = _backend.available()

# the backend fixtures hand out stateless modules, safe to share across examples
settings.register_profile(
    "minimr", suppress_health_check=[HealthCheck.function_scoped_fixture], deadline=None
)
settings.load_profile("minimr")


@pytest.fixture(params=BACKENDS)
def impl(request):
    """Each available backend module (compiled core and/or pure Python)."""
    return _backend.get(request.param)


@pytest.fixture(params=BACKENDS)
def backend_name(request):
    return request.param


VERDICTS: list[str] = []


@pytest.fixture
def verdict(capsys):
    """Print one PASS/FAIL/WARN line per acceptance criterion."""

    def emit(number: int, status: str, detail: str) -> None:
        line = f"criterion {number}: {status} {detail}"
        VERDICTS.append(line)
        with capsys.disabled():
            print(f"\n    {line}")

    return emit


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)
