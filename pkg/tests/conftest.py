from __future__ import annotations

import pytest
from hypothesis import HealthCheck, settings

from upnplab import _kernel

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture])
settings.load_profile("default")

_ACCEPTANCE: list[tuple[str, bool, str]] = []


class AcceptanceLog:
    """Collects one verdict per acceptance criterion for the terminal summary."""

    def record(self, criterion: str, passed: bool, detail: str = "") -> None:
        _ACCEPTANCE.append((criterion, passed, detail))


@pytest.fixture(scope="session")
def acceptance() -> AcceptanceLog:
    return AcceptanceLog()


@pytest.fixture(params=sorted(_kernel.backends()))
def kernel(request, monkeypatch):
    """Run a test once per available wire kernel, routing upnplab.wire through it."""
    impl = _kernel.backends()[request.param]
    for name in ("split_head", "join_head", "escape_value", "unescape_value", "is_token"):
        monkeypatch.setattr(_kernel, name, getattr(impl, name))
    return impl


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, passed, detail in _ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {criterion}" + (f"  ({detail})" if detail else ""))
